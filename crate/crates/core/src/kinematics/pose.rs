use std::ops::Range;

use nalgebra::{Matrix3, Vector3};

use super::rotation::{self, Rot6, IDENTITY_6D};
use super::skeleton::{NUM_BODY_JOINTS, NUM_JOINTS};
use crate::error::{Error, Result};

pub const POSE_DIM: usize = 3 + 6 * NUM_JOINTS;

/// Flattened pose `[t, φ, θ_b, θ_r]`: root translation followed by one 6D
/// rotation per joint (root, 21 body joints, 15 right-hand joints).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    params: [f64; POSE_DIM],
}

/// Parameter range of the root translation.
pub const TRANSLATION: Range<usize> = 0..3;
/// Parameter range of the global orientation.
pub const GLOBAL_ORIENT: Range<usize> = 3..9;
/// Parameter range of the body-joint rotations.
pub const BODY_POSE: Range<usize> = 9..(3 + 6 * NUM_BODY_JOINTS);
/// Parameter range of the right-hand rotations.
pub const HAND_POSE: Range<usize> = (3 + 6 * NUM_BODY_JOINTS)..POSE_DIM;

/// Parameter range holding the 6D rotation of `joint`.
pub const fn rot_range(joint: usize) -> Range<usize> {
    3 + 6 * joint..3 + 6 * joint + 6
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        let mut params = [0.0; POSE_DIM];
        for j in 0..NUM_JOINTS {
            params[rot_range(j)].copy_from_slice(&IDENTITY_6D);
        }
        Self { params }
    }

    pub fn from_params(params: [f64; POSE_DIM]) -> Self {
        Self { params }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let params: [f64; POSE_DIM] = values
            .try_into()
            .map_err(|_| Error::Shape(format!("pose needs {POSE_DIM} values, got {}", values.len())))?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &[f64; POSE_DIM] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64; POSE_DIM] {
        &mut self.params
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.params[0], self.params[1], self.params[2])
    }

    pub fn set_translation(&mut self, t: &Vector3<f64>) {
        self.params[TRANSLATION].copy_from_slice(t.as_slice());
    }

    pub fn rot6(&self, joint: usize) -> &[f64] {
        &self.params[rot_range(joint)]
    }

    pub fn set_rot6(&mut self, joint: usize, v: &Rot6) {
        self.params[rot_range(joint)].copy_from_slice(v);
    }

    pub fn rotation(&self, joint: usize) -> Result<Matrix3<f64>> {
        rotation::rot6d_to_matrix(self.rot6(joint))
    }

    pub fn set_rotation(&mut self, joint: usize, r: &Matrix3<f64>) {
        self.set_rot6(joint, &rotation::matrix_to_rot6d_unchecked(r));
    }

    /// Checks finiteness and that every 6D block decodes to a proper rotation.
    pub fn validate(&self) -> Result<()> {
        if self.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pose parameter".into()));
        }
        for j in 0..NUM_JOINTS {
            let r = self.rotation(j)?;
            if (r.determinant() - 1.0).abs() > 1e-6 {
                return Err(Error::NotOrthonormal { residual: (r.determinant() - 1.0).abs() });
            }
        }
        Ok(())
    }

    /// Snaps every 6D block onto the canonical encoding of its rotation.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = *self;
        for j in 0..NUM_JOINTS {
            out.set_rot6(j, &rotation::normalize_rot6d(self.rot6(j))?);
        }
        Ok(out)
    }
}
