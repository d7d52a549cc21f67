//! Object point clouds as text: one `x y z nx ny nz` record per line.
//! Blank lines and lines starting with `#` are skipped. Files with bare
//! `x y z` records get normals estimated from their neighbourhoods.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{parse_error, read_text};
use crate::error::Result;
use crate::hand_refine::{ObjectCloud, OBJECT_POINT_COUNT};

/// Normals must be unit length within this tolerance.
pub const NORMAL_TOLERANCE: f64 = 1e-4;

/// Neighbours used to fit a tangent plane when normals are missing.
const NORMAL_NEIGHBOURS: usize = 16;

/// Normals from local plane fits: the smallest principal axis of each
/// point's neighbourhood, flipped to point away from the centroid.
pub fn estimate_normals(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len().max(1) as f64;
    let k = NORMAL_NEIGHBOURS.min(points.len());
    crate::par::map_collect(points, |p| {
        let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, q)| ((q - p).norm_squared(), i)).collect();
        d.select_nth_unstable_by(k.saturating_sub(1), |a, b| a.0.total_cmp(&b.0));
        let nb = &d[..k];
        let mean = nb.iter().map(|(_, i)| points[*i]).sum::<Vector3<f64>>() / k as f64;
        let cov = nb.iter().fold(Matrix3::zeros(), |acc, (_, i)| {
            let v = points[*i] - mean;
            acc + v * v.transpose()
        });
        let eig = SymmetricEigen::new(cov);
        let (imin, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if *v < b.1 { (i, *v) } else { b });
        let n: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
        if n.dot(&(p - centroid)) < 0.0 {
            -n
        } else {
            n
        }
    })
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<ObjectCloud> {
    let mut points = Vec::with_capacity(OBJECT_POINT_COUNT);
    let mut normals = Vec::with_capacity(OBJECT_POINT_COUNT);
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_error(path, line, format!("`{t}` is not a number"))))
            .collect::<Result<_>>()?;
        let w = *width.get_or_insert(vals.len());
        if !(w == 3 || w == 6) || vals.len() != w {
            return Err(parse_error(path, line, format!("expected {} values (x y z nx ny nz, or x y z throughout), found {}", if w == 3 { 3 } else { 6 }, vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_error(path, line, "non-finite value"));
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
        if w == 6 {
            let n = Vector3::new(vals[3], vals[4], vals[5]);
            let len = n.norm();
            if (len - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(parse_error(path, line, format!("normal has length {len:.6}, expected 1 within {NORMAL_TOLERANCE}")));
            }
            // tighten to the in-memory tolerance without touching exact normals
            normals.push(if (len - 1.0).abs() > 1e-9 { n / len } else { n });
        }
    }
    if points.len() != OBJECT_POINT_COUNT {
        return Err(parse_error(path, 0, format!("cloud has {} points, expected {OBJECT_POINT_COUNT}", points.len())));
    }
    if width == Some(3) {
        normals = estimate_normals(&points);
    }
    ObjectCloud::new(points, normals, 1e-6)
}

pub fn load_cloud(path: &Path) -> Result<ObjectCloud> {
    parse_cloud(&read_text(path)?, path)
}

pub fn write_cloud(out: &mut impl Write, cloud: &ObjectCloud) -> std::io::Result<()> {
    for (p, n) in cloud.points().iter().zip(cloud.normals()) {
        writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
    }
    Ok(())
}

pub fn save_cloud(path: &Path, cloud: &ObjectCloud) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_cloud(&mut f, cloud)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn text(cloud: &ObjectCloud) -> String {
        let mut buf = Vec::new();
        write_cloud(&mut buf, cloud).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ObjectCloud::sphere(Vector3::new(0.1, -0.3, 0.7), 0.043);
        let back = parse_cloud(&text(&c), Path::new("c.txt")).unwrap();
        assert_eq!(back.points(), c.points());
        assert_eq!(back.normals(), c.normals());
    }

    #[test]
    fn missing_normals_are_estimated_outward() {
        let centre = Vector3::new(0.2, 0.0, 0.5);
        let c = ObjectCloud::sphere(centre, 0.05);
        let bare: String = c.points().iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect();
        let back = parse_cloud(&bare, Path::new("c.txt")).unwrap();
        for (n, m) in back.normals().iter().zip(c.normals()) {
            assert!(n.dot(m) > 0.99);
        }
        let mixed = format!("{}0 0 0 1 0 0\n", bare.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
        assert!(matches!(parse_cloud(&mixed, Path::new("c.txt")), Err(Error::Parse { line: 4096, .. })));
    }

    #[test]
    fn wrong_count_names_the_count() {
        let c = ObjectCloud::sphere(Vector3::zeros(), 0.05);
        let t = text(&c);
        let short: String = t.lines().skip(1).map(|l| format!("{l}\n")).collect();
        let err = parse_cloud(&short, Path::new("c.txt")).unwrap_err();
        assert!(err.to_string().contains("4095"), "{err}");
    }

    #[test]
    fn bad_normal_reports_its_line() {
        let c = ObjectCloud::sphere(Vector3::zeros(), 0.05);
        let mut lines: Vec<String> = text(&c).lines().map(String::from).collect();
        lines[6] = "0 0 0 0 0 1.01".into();
        let err = parse_cloud(&lines.join("\n"), Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
        lines[6] = "0 0 0 0 0".into();
        assert!(matches!(parse_cloud(&lines.join("\n"), Path::new("c.txt")), Err(Error::Parse { line: 7, .. })));
    }
}
