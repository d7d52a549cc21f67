//! Occupancy on a cubic lattice anchored at the world origin, so grids
//! built from different shapes line up cell for cell.

use std::collections::{HashSet, VecDeque};

use nalgebra::Vector3;

use crate::hand_refine::KdTree;
use crate::kinematics::hand::WorldCapsule;

/// Lattice step, metres.
pub const DEFAULT_VOXEL_STEP: f64 = 0.005;

pub type Cell = [i64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub step: f64,
    pub cells: HashSet<Cell>,
}

impl VoxelGrid {
    pub fn empty(step: f64) -> Self {
        Self { step, cells: HashSet::new() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_volume_cm3(&self) -> f64 {
        (self.step * 100.0).powi(3)
    }

    pub fn volume_cm3(&self) -> f64 {
        self.cells.len() as f64 * self.cell_volume_cm3()
    }

    pub fn intersection_count(&self, other: &VoxelGrid) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.cells.iter().filter(|c| large.cells.contains(*c)).count()
    }

    pub fn center(&self, c: &Cell) -> Vector3<f64> {
        Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.step
    }

    fn cell_of(&self, p: &Vector3<f64>) -> Cell {
        [(p.x / self.step).floor() as i64, (p.y / self.step).floor() as i64, (p.z / self.step).floor() as i64]
    }
}

/// Cells whose centre lies inside any capsule.
pub fn voxelize_capsules(capsules: &[WorldCapsule], step: f64) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(step);
    for cap in capsules {
        let r = Vector3::repeat(cap.radius);
        let lo = grid.cell_of(&(cap.a.inf(&cap.b) - r));
        let hi = grid.cell_of(&(cap.a.sup(&cap.b) + r));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let c = [i, j, k];
                    if cap.contains(&grid.center(&c)) {
                        grid.cells.insert(c);
                    }
                }
            }
        }
    }
    grid
}

/// Solid occupancy of a closed oriented point cloud. Cells within one step
/// of a sample form a shell; the exterior is flood-filled from the corner
/// of the padded bounding box. Everything the fill cannot reach is solid,
/// except shell cells whose centre lies in front of the nearest sample's
/// normal.
pub fn voxelize_solid(points: &[Vector3<f64>], normals: &[Vector3<f64>], step: f64) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(step);
    if points.is_empty() {
        return grid;
    }
    let mut shell = HashSet::new();
    for p in points {
        let lo = grid.cell_of(&p.add_scalar(-step));
        let hi = grid.cell_of(&p.add_scalar(step));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let c = [i, j, k];
                    if (grid.center(&c) - p).norm() <= step {
                        shell.insert(c);
                    }
                }
            }
        }
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for c in &shell {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a] - 1);
            hi[a] = hi[a].max(c[a] + 1);
        }
    }
    let dims = [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize, (hi[2] - lo[2] + 1) as usize];
    let index = |c: &Cell| ((c[0] - lo[0]) as usize * dims[1] + (c[1] - lo[1]) as usize) * dims[2] + (c[2] - lo[2]) as usize;
    let mut exterior = vec![false; dims[0] * dims[1] * dims[2]];
    let mut queue = VecDeque::from([lo]);
    exterior[index(&lo)] = true;
    while let Some(c) = queue.pop_front() {
        for (a, d) in [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
            let mut n = c;
            n[a] += d;
            if n[a] < lo[a] || n[a] > hi[a] || shell.contains(&n) {
                continue;
            }
            let k = index(&n);
            if !exterior[k] {
                exterior[k] = true;
                queue.push_back(n);
            }
        }
    }
    let tree = KdTree::new(points);
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let c = [i, j, k];
                if exterior[index(&c)] {
                    continue;
                }
                if shell.contains(&c) {
                    let x = grid.center(&c);
                    let (r, _) = tree.nearest(&x).expect("non-empty cloud");
                    if (x - points[r]).dot(&normals[r]) > 0.0 {
                        continue;
                    }
                }
                grid.cells.insert(c);
            }
        }
    }
    grid
}
