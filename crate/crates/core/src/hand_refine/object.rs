use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const OBJECT_POINT_COUNT: usize = 4096;

/// Oriented point cloud of the grasped object, world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCloud {
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl ObjectCloud {
    /// Requires exactly 4096 points with normals of unit length (±`tol`).
    pub fn new(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>, tol: f64) -> Result<Self> {
        if points.len() != OBJECT_POINT_COUNT {
            return Err(Error::Shape(format!("object cloud needs {OBJECT_POINT_COUNT} points, got {}", points.len())));
        }
        if normals.len() != points.len() {
            return Err(Error::Shape(format!("{} normals for {} points", normals.len(), points.len())));
        }
        for (i, (p, n)) in points.iter().zip(&normals).enumerate() {
            if !p.iter().chain(n.iter()).all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("object point {i}")));
            }
            if (n.norm() - 1.0).abs() > tol {
                return Err(Error::Shape(format!("normal of point {i} has length {:.6}", n.norm())));
            }
        }
        Ok(Self { points, normals })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Fibonacci-lattice sphere with radial normals.
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        let (points, normals) = fibonacci_sphere(OBJECT_POINT_COUNT, center, radius);
        Self { points, normals }
    }

    /// Axis-aligned box with face normals; points are spread over the six
    /// faces in proportion to their area.
    pub fn cuboid(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        let faces = [(0, half.y * half.z), (1, half.x * half.z), (2, half.x * half.y)];
        let total: f64 = faces.iter().map(|f| 2.0 * f.1).sum();
        let mut counts: Vec<usize> =
            faces.iter().flat_map(|f| [f.1, f.1]).map(|a| (a / total * OBJECT_POINT_COUNT as f64).floor() as usize).collect();
        let mut k = 0;
        while counts.iter().sum::<usize>() < OBJECT_POINT_COUNT {
            counts[k % 6] += 1;
            k += 1;
        }
        let mut points = Vec::with_capacity(OBJECT_POINT_COUNT);
        let mut normals = Vec::with_capacity(OBJECT_POINT_COUNT);
        for (face, &count) in counts.iter().enumerate() {
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let cols = ((count as f64) * half[u] / half[v]).sqrt().ceil().max(1.0) as usize;
            let rows = count.div_ceil(cols);
            for i in 0..count {
                let (r, c) = (i / cols, i % cols);
                let mut p = center;
                p[axis] += sign * half[axis];
                p[u] += half[u] * (2.0 * (c as f64 + 0.5) / cols as f64 - 1.0);
                p[v] += half[v] * (2.0 * (r as f64 + 0.5) / rows as f64 - 1.0);
                let mut n = Vector3::zeros();
                n[axis] = sign;
                points.push(p);
                normals.push(n);
            }
        }
        Self { points, normals }
    }
}

pub fn fibonacci_sphere(n: usize, center: Vector3<f64>, radius: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let normals: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let th = golden * i as f64;
            Vector3::new(rho * th.cos(), rho * th.sin(), z)
        })
        .collect();
    let points = normals.iter().map(|d| center + d * radius).collect();
    (points, normals)
}
