use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use super::{HexMesh, SurfaceMesh};
use crate::linalg::{abs, ceil, cross3, dot3, floor, sub3, Vec3};
use crate::{Error, Result};

/// Rule deciding whether a voxel becomes an element.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Occupancy {
    /// Voxel center lies inside the surface.
    CenterInside,
    /// Voxel center lies inside, or some triangle passes through the voxel
    /// interior. Keeps thin features.
    #[default]
    CenterOrIntersect,
}

// Offsets applied to the ray origins so rays never graze mesh edges or
// vertices lying on grid planes.
const RAY_JITTER: [f64; 2] = [1.234_567_890_1e-7, 2.718_281_828_4e-7];

pub fn voxelize(surface: &SurfaceMesh, h: f64) -> Result<HexMesh> {
    voxelize_with(surface, h, Occupancy::CenterOrIntersect)
}

/// Voxelizes a closed surface on the grid `{i·h}` anchored at the origin.
/// Elements are ordered lexicographically by cell index.
pub fn voxelize_with(surface: &SurfaceMesh, h: f64, rule: Occupancy) -> Result<HexMesh> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("voxel size must be positive, got {h}")));
    }
    if surface.faces.is_empty() {
        return Err(Error::EmptyVoxelization);
    }
    let edges = surface.boundary_edges();
    if !edges.is_empty() {
        return Err(Error::OpenSurface { edges });
    }
    let (lo, hi) = surface.bounding_box();
    let cmin = lo.map(|x| floor(x / h) as i64 - 1);
    let cmax = hi.map(|x| ceil(x / h) as i64 + 1);

    let tris: Vec<[Vec3; 3]> = surface.faces.iter().map(|f| f.map(|i| surface.vertices[i])).collect();
    let mut cells: BTreeSet<[i64; 3]> = BTreeSet::new();

    // Center-inside test, one ray along +x per (j, k) column of centers.
    for j in cmin[1]..cmax[1] {
        for k in cmin[2]..cmax[2] {
            let y = (j as f64 + 0.5) * h + RAY_JITTER[0] * h;
            let z = (k as f64 + 0.5) * h + RAY_JITTER[1] * h;
            let mut xs = ray_crossings(&tris, y, z);
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks(2) {
                if pair.len() < 2 {
                    break;
                }
                // Centers with x in (pair[0], pair[1]) are inside.
                let i0 = ceil(pair[0] / h - 0.5) as i64;
                let i1 = floor(pair[1] / h - 0.5) as i64;
                for i in i0..=i1 {
                    let xc = (i as f64 + 0.5) * h;
                    if xc > pair[0] && xc < pair[1] {
                        cells.insert([i, j, k]);
                    }
                }
            }
        }
    }

    if rule == Occupancy::CenterOrIntersect {
        let shrink = 0.5 * h - 1e-9 * h;
        for tri in &tris {
            let tlo = [0, 1, 2].map(|d| tri[0][d].min(tri[1][d]).min(tri[2][d]));
            let thi = [0, 1, 2].map(|d| tri[0][d].max(tri[1][d]).max(tri[2][d]));
            let a = tlo.map(|x| floor(x / h) as i64);
            let b = thi.map(|x| floor(x / h) as i64);
            for i in a[0]..=b[0] {
                for j in a[1]..=b[1] {
                    for k in a[2]..=b[2] {
                        let c = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h];
                        if triangle_box_overlap(tri, c, shrink) {
                            cells.insert([i, j, k]);
                        }
                    }
                }
            }
        }
    }

    if cells.is_empty() {
        return Err(Error::EmptyVoxelization);
    }
    Ok(HexMesh::from_cells(h, cells.into_iter().collect()))
}

/// x-coordinates where the line `{(t, y, z)}` crosses the triangles.
fn ray_crossings(tris: &[[Vec3; 3]], y: f64, z: f64) -> Vec<f64> {
    let mut xs = Vec::new();
    for t in tris {
        let e = |a: Vec3, b: Vec3| (b[1] - a[1]) * (z - a[2]) - (b[2] - a[2]) * (y - a[1]);
        let w0 = e(t[1], t[2]);
        let w1 = e(t[2], t[0]);
        let w2 = e(t[0], t[1]);
        let pos = w0 > 0.0 && w1 > 0.0 && w2 > 0.0;
        let neg = w0 < 0.0 && w1 < 0.0 && w2 < 0.0;
        if !(pos || neg) {
            continue;
        }
        let s = w0 + w1 + w2;
        xs.push((w0 * t[0][0] + w1 * t[1][0] + w2 * t[2][0]) / s);
    }
    xs
}

/// Parity test along +x. Points on the surface are unspecified.
pub fn point_inside(surface: &SurfaceMesh, p: Vec3) -> bool {
    let tris: Vec<[Vec3; 3]> = surface.faces.iter().map(|f| f.map(|i| surface.vertices[i])).collect();
    let (lo, hi) = surface.bounding_box();
    let scale = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max) * 1e-3;
    let (y, z) = (p[1] + RAY_JITTER[0] * scale, p[2] + RAY_JITTER[1] * scale);
    ray_crossings(&tris, y, z).into_iter().filter(|&x| x > p[0]).count() % 2 == 1
}

/// Separating-axis overlap test of a triangle and the cube of half-width
/// `half` centered at `c`.
fn triangle_box_overlap(tri: &[Vec3; 3], c: Vec3, half: f64) -> bool {
    let v = tri.map(|p| sub3(p, c));
    let e = [sub3(v[1], v[0]), sub3(v[2], v[1]), sub3(v[0], v[2])];
    let separated = |axis: Vec3| {
        let p = v.map(|x| dot3(x, axis));
        let r = half * (abs(axis[0]) + abs(axis[1]) + abs(axis[2]));
        let (mn, mx) = (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]));
        mn > r || mx < -r
    };
    for d in 0..3 {
        let mut axis = [0.0; 3];
        axis[d] = 1.0;
        if separated(axis) {
            return false;
        }
    }
    let n = cross3(e[0], e[1]);
    if separated(n) {
        return false;
    }
    for ei in &e {
        for d in 0..3 {
            let mut unit = [0.0; 3];
            unit[d] = 1.0;
            let axis = cross3(*ei, unit);
            if axis != [0.0; 3] && separated(axis) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> SurfaceMesh {
        SurfaceMesh::box_surface([0.0; 3], [1.0; 3], [2, 2, 2])
    }

    #[test]
    fn unit_cube_counts() {
        let m = voxelize(&unit_cube(), 0.5).unwrap();
        assert_eq!((m.num_elements(), m.num_nodes()), (8, 27));
        let m = voxelize(&unit_cube(), 1.0).unwrap();
        assert_eq!((m.num_elements(), m.num_nodes()), (1, 8));
        assert_eq!(m.element_volume(), 1.0);
    }

    #[test]
    fn open_surface_is_rejected() {
        let mut s = unit_cube();
        s.faces.truncate(s.faces.len() - 2);
        match voxelize(&s, 0.5) {
            Err(Error::OpenSurface { edges }) => assert!(!edges.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thin_slab_kept_by_intersection_rule() {
        let s = SurfaceMesh::box_surface([0.1, 0.1, 0.1], [0.9, 0.9, 0.2], [1, 1, 1]);
        assert!(matches!(voxelize_with(&s, 1.0, Occupancy::CenterInside), Err(Error::EmptyVoxelization)));
        assert_eq!(voxelize(&s, 1.0).unwrap().num_elements(), 1);
    }

    #[test]
    fn integer_translation_shifts_nodes() {
        let s = SurfaceMesh::icosphere([0.3, 0.1, -0.2], 1.0, 2);
        let a = voxelize(&s, 0.25).unwrap();
        let b = voxelize(&s.translated([0.5, -0.25, 1.0]), 0.25).unwrap();
        assert_eq!(a.num_elements(), b.num_elements());
        for (p, q) in a.nodes.iter().zip(b.nodes.iter()) {
            assert_eq!([p[0] + 0.5, p[1] - 0.25, p[2] + 1.0], *q);
        }
    }

    #[test]
    fn point_inside_cube() {
        let s = unit_cube();
        assert!(point_inside(&s, [0.5, 0.5, 0.5]));
        assert!(!point_inside(&s, [1.5, 0.5, 0.5]));
        assert!(!point_inside(&s, [-0.5, 0.5, 0.5]));
    }
}
