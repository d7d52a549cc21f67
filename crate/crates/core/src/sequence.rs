//! Motion sequences, interpolation seeding and the size-3 mean filter.

use crate::error::{Error, Result};
use crate::kinematics::{joint_positions, Pose, Skeleton, NUM_JOINTS, POSE_DIM};

/// Pose parameters followed by the world joint positions.
pub const Z_DIM: usize = POSE_DIM + 3 * NUM_JOINTS;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<Pose>,
    pub fps: f64,
    /// Per frame `[left, right]` foot contact probability.
    pub contact_probs: Option<Vec<[f64; 2]>>,
}

impl MotionSequence {
    pub fn new(frames: Vec<Pose>, fps: f64) -> Result<Self> {
        let seq = Self { frames, fps, contact_probs: None };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_contacts(mut self, probs: Vec<[f64; 2]>) -> Result<Self> {
        self.contact_probs = Some(probs);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidLength(format!("a sequence needs at least 2 frames, got {}", self.frames.len())));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate().map_err(|e| Error::Shape(format!("frame {i}: {e}")))?;
        }
        if let Some(c) = &self.contact_probs {
            if c.len() != self.frames.len() {
                return Err(Error::Shape(format!("{} contact entries for {} frames", c.len(), self.frames.len())));
            }
            if c.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Shape("contact probabilities must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of transitions, `T`.
    pub fn horizon(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn first(&self) -> &Pose {
        &self.frames[0]
    }

    pub fn last(&self) -> &Pose {
        &self.frames[self.frames.len() - 1]
    }
}

/// An extended pose `Z = [X, J]` with its endpoint flag (0 for a given
/// endpoint, 1 for an interpolated frame).
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedFrame {
    pub z: Vec<f64>,
    pub flag: f64,
}

impl ExtendedFrame {
    pub fn pose(&self) -> Pose {
        Pose::from_slice(&self.z[..POSE_DIM]).expect("Z always holds a full pose")
    }

    pub fn is_endpoint(&self) -> bool {
        self.flag == 0.0
    }
}

pub fn extend_with_joints(skel: &Skeleton, pose: &Pose) -> Result<Vec<f64>> {
    let mut z = Vec::with_capacity(Z_DIM);
    z.extend_from_slice(pose.params());
    for p in joint_positions(skel, pose)? {
        z.extend_from_slice(p.as_slice());
    }
    Ok(z)
}

/// Linear interpolation from `z0` to `zt` over `t` steps (`t + 1` frames).
/// Endpoints are copied verbatim.
pub fn seed_interpolation(z0: &[f64], zt: &[f64], t: usize) -> Result<Vec<ExtendedFrame>> {
    if t == 0 {
        return Err(Error::InvalidLength("interpolation horizon must be at least 1".into()));
    }
    if z0.len() != Z_DIM || zt.len() != Z_DIM {
        return Err(Error::Shape(format!("extended frames need {Z_DIM} values, got {} and {}", z0.len(), zt.len())));
    }
    let mut out = Vec::with_capacity(t + 1);
    out.push(ExtendedFrame { z: z0.to_vec(), flag: 0.0 });
    for i in 1..t {
        let s = i as f64 / t as f64;
        let z = z0.iter().zip(zt).map(|(a, b)| a + s * (b - a)).collect();
        out.push(ExtendedFrame { z, flag: 1.0 });
    }
    out.push(ExtendedFrame { z: zt.to_vec(), flag: 0.0 });
    Ok(out)
}

/// Seeds a sequence between two poses.
pub fn seed_between(skel: &Skeleton, start: &Pose, target: &Pose, t: usize) -> Result<Vec<ExtendedFrame>> {
    seed_interpolation(&extend_with_joints(skel, start)?, &extend_with_joints(skel, target)?, t)
}

/// Size-3 moving average. Interior samples become the mean of themselves
/// and their two neighbours; the first and last samples are kept as is.
pub fn mean_filter3<V>(signal: &[V]) -> Vec<V>
where
    V: Clone + AsRef<[f64]> + AsMut<[f64]>,
{
    let mut out = signal.to_vec();
    for i in 1..signal.len().saturating_sub(1) {
        let (a, b, c) = (signal[i - 1].as_ref(), signal[i].as_ref(), signal[i + 1].as_ref());
        for (k, y) in out[i].as_mut().iter_mut().enumerate() {
            *y = (a[k] + b[k] + c[k]) / 3.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::random_pose;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_z(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        extend_with_joints(&Skeleton::default(), &random_pose(&mut rng, 1.0)).unwrap()
    }

    #[test]
    fn midpoint_for_two_steps() {
        let (a, b) = (random_z(1), random_z(2));
        let s = seed_interpolation(&a, &b, 2).unwrap();
        for k in 0..Z_DIM {
            assert!((s[1].z[k] - 0.5 * (a[k] + b[k])).abs() < 1e-15);
        }
        assert_eq!(s.iter().map(|f| f.flag).collect::<Vec<_>>(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn endpoints_are_bit_exact() {
        let (a, b) = (random_z(3), random_z(4));
        for t in [1, 3, 7, 30] {
            let s = seed_interpolation(&a, &b, t).unwrap();
            assert_eq!(s.len(), t + 1);
            assert_eq!(s[0].z, a);
            assert_eq!(s[t].z, b);
        }
    }

    #[test]
    fn constant_interpolation() {
        let a = random_z(5);
        let s = seed_interpolation(&a, &a, 4).unwrap();
        assert!(s.iter().all(|f| f.z == a));
        assert_eq!(s.iter().map(|f| f.flag).collect::<Vec<_>>(), [0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_horizon_is_an_error() {
        let a = random_z(6);
        assert!(matches!(seed_interpolation(&a, &a, 0), Err(Error::InvalidLength(_))));
    }

    #[test]
    fn extended_frame_layout() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pose = random_pose(&mut rng, 1.0);
        let z = extend_with_joints(&skel, &pose).unwrap();
        assert_eq!(z.len(), 336);
        let j = joint_positions(&skel, &pose).unwrap();
        for (k, p) in j.iter().enumerate() {
            assert_eq!(&z[POSE_DIM + 3 * k..POSE_DIM + 3 * k + 3], p.as_slice());
        }
        let rest = extend_with_joints(&skel, &Pose::identity()).unwrap();
        let rest_j = joint_positions(&skel, &Pose::identity()).unwrap();
        assert_eq!(&rest[POSE_DIM..POSE_DIM + 3], rest_j[0].as_slice());
    }

    #[test]
    fn mean_filter_examples() {
        let constant = vec![[2.5]; 5];
        assert_eq!(mean_filter3(&constant), constant);
        assert_eq!(mean_filter3(&[[0.0], [3.0], [0.0]]), vec![[0.0], [1.0], [0.0]]);
        assert_eq!(mean_filter3(&[[4.0]]), vec![[4.0]]);
        assert_eq!(mean_filter3(&[[4.0], [1.0]]), vec![[4.0], [1.0]]);
        let empty: Vec<[f64; 1]> = vec![];
        assert!(mean_filter3(&empty).is_empty());
    }

    proptest! {
        #[test]
        fn mean_filter_is_linear_and_keeps_endpoints(
            x in prop::collection::vec(-10.0f64..10.0, 1..20),
            y_seed in -10.0f64..10.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let xs: Vec<[f64; 1]> = x.iter().map(|v| [*v]).collect();
            let ys: Vec<[f64; 1]> = x.iter().enumerate().map(|(i, v)| [v * 0.5 + y_seed + i as f64]).collect();
            let combo: Vec<[f64; 1]> = xs.iter().zip(&ys).map(|(p, q)| [a * p[0] + b * q[0]]).collect();
            let (fx, fy, fc) = (mean_filter3(&xs), mean_filter3(&ys), mean_filter3(&combo));
            for i in 0..xs.len() {
                prop_assert!((fc[i][0] - (a * fx[i][0] + b * fy[i][0])).abs() < 1e-9);
            }
            prop_assert_eq!(fx[0], xs[0]);
            prop_assert_eq!(fx[xs.len() - 1], xs[xs.len() - 1]);
        }
    }
}
