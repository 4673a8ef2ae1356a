use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::HexMesh;
use crate::linalg::abs;
use crate::{Error, Result};

/// A cut face, given as the two face-adjacent elements it separates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CutRecord {
    pub elements: [usize; 2],
}

impl CutRecord {
    pub fn new(a: usize, b: usize) -> Self {
        CutRecord { elements: [a.min(b), a.max(b)] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

fn adjacent_axis(a: [i64; 3], b: [i64; 3]) -> Option<usize> {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let nonzero: Vec<usize> = (0..3).filter(|&i| d[i] != 0).collect();
    match nonzero.as_slice() {
        [i] if d[*i].abs() == 1 => Some(*i),
        _ => None,
    }
}

/// All element pairs whose shared face lies on the plane `axis = coord`,
/// restricted to face centers inside the rectangle `[lo, hi]` spanned by the
/// two remaining axes (in increasing axis order).
pub fn cut_records_on_plane(mesh: &HexMesh, axis: Axis, coord: f64, lo: [f64; 2], hi: [f64; 2]) -> Vec<CutRecord> {
    let ax = axis.index();
    let others = [(ax + 1) % 3, (ax + 2) % 3];
    let others = [others[0].min(others[1]), others[0].max(others[1])];
    let tol = 1e-9 * mesh.h;
    let lookup = mesh.cell_lookup();
    let mut out = Vec::new();
    for (e, cell) in mesh.cells.iter().enumerate() {
        let mut next = *cell;
        next[ax] += 1;
        let Some(&f) = lookup.get(&next) else { continue };
        if abs(next[ax] as f64 * mesh.h - coord) > tol {
            continue;
        }
        let inside = others.iter().enumerate().all(|(k, &o)| {
            let c = (cell[o] as f64 + 0.5) * mesh.h;
            c >= lo[k] - tol && c <= hi[k] + tol
        });
        if inside {
            out.push(CutRecord::new(e, f));
        }
    }
    out.sort();
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Duplicates nodes along cut faces so elements on opposite sides no
/// longer share them.
///
/// Around each node, the incident elements are grouped by face adjacency
/// with and without the cuts. A group split into two sides gets one new
/// node for the side not containing the lowest-numbered element; splits
/// into more than two sides are rejected, as are cuts that separate no
/// node at all.
pub fn duplicate_cut_vertices(mesh: &HexMesh, cuts: &[CutRecord]) -> Result<HexMesh> {
    if cuts.is_empty() {
        return Ok(mesh.clone());
    }
    let ne = mesh.num_elements();
    let mut cut_set: BTreeSet<CutRecord> = mesh.cuts.iter().copied().collect();
    for c in cuts {
        let [a, b] = c.elements;
        if a >= ne || b >= ne {
            return Err(Error::InvalidInput(format!("cut references missing element in {:?}", c.elements)));
        }
        if adjacent_axis(mesh.cells[a], mesh.cells[b]).is_none() {
            return Err(Error::InvalidInput(format!("elements {a} and {b} are not face-adjacent")));
        }
        cut_set.insert(CutRecord::new(a, b));
    }

    let lookup = mesh.cell_lookup();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); mesh.num_nodes()];
    for (e, el) in mesh.elements.iter().enumerate() {
        for &n in el {
            if !incident[n].contains(&e) {
                incident[n].push(e);
            }
        }
    }
    let neighbors = |e: usize| -> Vec<usize> {
        let mut out = Vec::new();
        for ax in 0..3 {
            for s in [-1i64, 1] {
                let mut c = mesh.cells[e];
                c[ax] += s;
                if let Some(&f) = lookup.get(&c) {
                    out.push(f);
                }
            }
        }
        out
    };

    let mut out = mesh.clone();
    // (node, element) -> replacement node
    let mut remap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (n, elems) in incident.iter().enumerate() {
        if elems.len() < 2 {
            continue;
        }
        let local: BTreeMap<usize, usize> = elems.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut whole = UnionFind((0..elems.len()).collect());
        let mut split = UnionFind((0..elems.len()).collect());
        for (i, &e) in elems.iter().enumerate() {
            for f in neighbors(e) {
                // Adjacent elements must still share this node to be joined through it.
                let Some(&j) = local.get(&f) else { continue };
                whole.union(i, j);
                if !cut_set.contains(&CutRecord::new(e, f)) {
                    split.union(i, j);
                }
            }
        }
        let mut sides: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for i in 0..elems.len() {
            let (w, s) = (whole.find(i), split.find(i));
            sides.entry(w).or_default().insert(s);
        }
        for (_, parts) in sides {
            if parts.len() > 2 {
                return Err(Error::CutNotSeparating(format!(
                    "node {n} would be split into {} sides",
                    parts.len()
                )));
            }
            if parts.len() == 2 {
                // Roots are the lowest local index, hence the lowest element, of each side.
                let moved = *parts.iter().max().expect("two sides");
                let copy = out.nodes.len();
                out.nodes.push(mesh.nodes[n]);
                out.tags.push(mesh.tags[n]);
                for (i, &e) in elems.iter().enumerate() {
                    if split.find(i) == moved {
                        remap.insert((n, e), copy);
                    }
                }
            }
        }
    }

    for c in cuts {
        let [a, b] = c.elements;
        let shared: Vec<usize> = mesh.elements[a].iter().copied().filter(|n| mesh.elements[b].contains(n)).collect();
        if !shared.iter().any(|&n| remap.contains_key(&(n, a)) || remap.contains_key(&(n, b))) {
            return Err(Error::CutNotSeparating(format!("cut between elements {a} and {b} separates no node")));
        }
    }

    for (e, el) in out.elements.iter_mut().enumerate() {
        for n in el.iter_mut() {
            if let Some(&copy) = remap.get(&(*n, e)) {
                *n = copy;
            }
        }
    }
    out.cuts = cut_set.into_iter().collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cut_is_identity() {
        let m = HexMesh::grid([2, 1, 1], 1.0);
        assert_eq!(duplicate_cut_vertices(&m, &[]).unwrap(), m);
    }

    #[test]
    fn bar_cut_duplicates_shared_face() {
        let m = HexMesh::grid([2, 1, 1], 1.0);
        let cuts = cut_records_on_plane(&m, Axis::X, 1.0, [0.0; 2], [1.0; 2]);
        assert_eq!(cuts, vec![CutRecord::new(0, 1)]);
        let c = duplicate_cut_vertices(&m, &cuts).unwrap();
        assert_eq!(c.num_nodes(), 16);
        assert_eq!(c.num_elements(), 2);
        let shared = c.elements[0].iter().filter(|n| c.elements[1].contains(n)).count();
        assert_eq!(shared, 0);
        for n in 12..16 {
            assert!(m.nodes.contains(&c.nodes[n]));
        }
    }

    #[test]
    fn partial_cut_keeps_crack_tip_connected() {
        let m = HexMesh::grid([2, 1, 2], 1.0);
        let cuts = cut_records_on_plane(&m, Axis::X, 1.0, [0.0, 0.0], [1.0, 1.0]);
        assert_eq!(cuts.len(), 1);
        let c = duplicate_cut_vertices(&m, &cuts).unwrap();
        assert_eq!(c.num_nodes(), m.num_nodes() + 2);
    }

    #[test]
    fn interior_face_does_not_separate() {
        let m = HexMesh::grid([2, 3, 3], 1.0);
        let cuts = cut_records_on_plane(&m, Axis::X, 1.0, [1.0, 1.0], [2.0, 2.0]);
        assert_eq!(cuts.len(), 1);
        assert!(matches!(duplicate_cut_vertices(&m, &cuts), Err(Error::CutNotSeparating(_))));
    }

    #[test]
    fn non_adjacent_pair_is_rejected() {
        let m = HexMesh::grid([3, 1, 1], 1.0);
        assert!(duplicate_cut_vertices(&m, &[CutRecord::new(0, 2)]).is_err());
    }
}
