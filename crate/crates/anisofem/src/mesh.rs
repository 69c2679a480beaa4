//! Tetrahedral mesh data model and structured generators.
//!
//! Indices are 0-based internally; the MEDIT file boundary converts to
//! 1-based. Elements are re-oriented to positive volume at construction
//! (last two vertices swapped), never rejected for orientation.

use crate::error::{Error, Result};
use crate::geometry::{ElementMap, Vec3};
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct TetMesh {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    tet_tags: Vec<i32>,
    facets: Vec<[usize; 3]>,
    facet_tags: Vec<i32>,
    volumes: Vec<f64>,
    bbox: (Vec3, Vec3),
}

fn signed_volume(p: &[Vec3; 4]) -> f64 {
    (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0])) / 6.0
}

fn face_key(a: usize, b: usize, c: usize) -> [usize; 3] {
    let mut k = [a, b, c];
    k.sort_unstable();
    k
}

impl TetMesh {
    /// Validates indices, fixes orientation, and checks that every boundary
    /// facet is a face of exactly one tetrahedron.
    pub fn new(
        vertices: Vec<Vec3>,
        mut tets: Vec<[usize; 4]>,
        tet_tags: Vec<i32>,
        facets: Vec<[usize; 3]>,
        facet_tags: Vec<i32>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if tets.len() != tet_tags.len() {
            return Err(Error::Topology("tet/tag count mismatch".into()));
        }
        if facets.len() != facet_tags.len() {
            return Err(Error::Topology("facet/tag count mismatch".into()));
        }
        for (i, t) in tets.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::Topology(format!("tet {i} has vertex index out of range")));
            }
        }
        for (i, f) in facets.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(Error::Topology(format!("facet {i} has vertex index out of range")));
            }
        }
        let mut volumes = Vec::with_capacity(tets.len());
        for (i, t) in tets.iter_mut().enumerate() {
            let mut p = [vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]];
            let mut v = signed_volume(&p);
            if v < 0.0 {
                t.swap(2, 3);
                p.swap(2, 3);
                v = signed_volume(&p);
            }
            if v <= 0.0 {
                return Err(Error::Topology(format!("tet {i} has zero volume")));
            }
            volumes.push(v);
        }
        // boundary facets must each match exactly one element face, and that
        // face must lie on the boundary (not shared by two elements)
        let mut face_count: HashMap<[usize; 3], u32> = HashMap::new();
        for t in &tets {
            for f in [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
                *face_count.entry(face_key(t[f[0]], t[f[1]], t[f[2]])).or_insert(0) += 1;
            }
        }
        for (i, f) in facets.iter().enumerate() {
            match face_count.get(&face_key(f[0], f[1], f[2])) {
                Some(1) => {}
                Some(n) => {
                    return Err(Error::Topology(format!(
                        "facet {i} is shared by {n} tetrahedra, expected 1"
                    )))
                }
                None => {
                    return Err(Error::Topology(format!(
                        "facet {i} is not a face of any tetrahedron"
                    )))
                }
            }
        }
        let bbox = bounding_box(&vertices);
        Ok(Self {
            vertices,
            tets,
            tet_tags,
            facets,
            facet_tags,
            volumes,
            bbox,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Element count, the `N` of quality measures.
    pub fn n_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        self.vertices[i]
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn tet(&self, e: usize) -> [usize; 4] {
        self.tets[e]
    }

    pub fn tet_tag(&self, e: usize) -> i32 {
        self.tet_tags[e]
    }

    pub fn tet_tags(&self) -> &[i32] {
        &self.tet_tags
    }

    pub fn facets(&self) -> &[[usize; 3]] {
        &self.facets
    }

    pub fn facet_tags(&self) -> &[i32] {
        &self.facet_tags
    }

    pub fn element_vertices(&self, e: usize) -> [Vec3; 4] {
        let t = self.tets[e];
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
            self.vertices[t[3]],
        ]
    }

    pub fn barycenter(&self, e: usize) -> Vec3 {
        let p = self.element_vertices(e);
        (p[0] + p[1] + p[2] + p[3]) * 0.25
    }

    pub fn volume(&self, e: usize) -> f64 {
        self.volumes[e]
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        self.bbox
    }

    pub fn bbox_diagonal(&self) -> f64 {
        (self.bbox.1 - self.bbox.0).norm()
    }

    /// Affine map of element `e` from the reference tetrahedron.
    pub fn element_map(&self, e: usize) -> Result<ElementMap> {
        ElementMap::from_vertices(e, &self.element_vertices(e), self.bbox_diagonal())
    }

    /// Vertex-to-vertex adjacency (vertices sharing an element).
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for t in &self.tets {
            for &a in t {
                for &b in t {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        adj
    }

    /// Elements adjacent to each vertex.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut v2t: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for (i, t) in self.tets.iter().enumerate() {
            for &v in t {
                v2t[v].push(i);
            }
        }
        v2t
    }

    /// True for vertices lying on any boundary facet.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut onb = vec![false; self.vertices.len()];
        for f in &self.facets {
            for &v in f {
                onb[v] = true;
            }
        }
        onb
    }

    /// Reassign boundary facet tags from a predicate on the facet vertices.
    pub fn retag_facets(&mut self, tag_of: impl Fn(&[Vec3; 3]) -> i32) {
        for (i, f) in self.facets.iter().enumerate() {
            let p = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
            self.facet_tags[i] = tag_of(&p);
        }
    }

    /// Affine image of the whole mesh, `x ↦ S x`. Element orientation is
    /// re-fixed when `det S < 0`; tags carry over.
    pub fn mapped(&self, s: &crate::geometry::Mat3) -> Result<TetMesh> {
        let vertices: Vec<Vec3> = self.vertices.iter().map(|p| s * p).collect();
        TetMesh::new(
            vertices,
            self.tets.clone(),
            self.tet_tags.clone(),
            self.facets.clone(),
            self.facet_tags.clone(),
        )
    }
}

fn bounding_box(vertices: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        for d in 0..3 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    (lo, hi)
}

/// The six path tetrahedra of a hexahedral cell sharing its main diagonal,
/// one per permutation of the axes (Kuhn subdivision).
const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Structured box mesh: an `nx × ny × nz` hexahedral grid, each cell split
/// into 6 tetrahedra by the Kuhn subdivision, so `N = 6·nx·ny·nz`.
///
/// Facet tags: 1/2 at `x = lo/hi`, 3/4 at `y = lo/hi`, 5/6 at `z = lo/hi`.
/// `mirror_x` reverses the x grid line order, flipping the cell diagonals
/// from the `(1,1)` to the `(-1,1)` direction in the xy plane.
pub fn uniform_box_mesh(
    nx: usize,
    ny: usize,
    nz: usize,
    lo: Vec3,
    hi: Vec3,
    mirror_x: bool,
) -> TetMesh {
    assert!(nx >= 1 && ny >= 1 && nz >= 1);
    let line = |n: usize, a: f64, b: f64| -> Vec<f64> {
        (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
    };
    let mut xs = line(nx, lo.x, hi.x);
    if mirror_x {
        xs.reverse();
    }
    let ys = line(ny, lo.y, hi.y);
    let zs = line(nz, lo.z, hi.z);
    build_kuhn(&xs, &ys, &zs, lo, hi)
}

/// `uniform_box_mesh` specialisation for a cube split `n` times per axis.
pub fn uniform_cube_mesh(n: usize, lo: Vec3, hi: Vec3) -> TetMesh {
    uniform_box_mesh(n, n, n, lo, hi, false)
}

fn build_kuhn(xs: &[f64], ys: &[f64], zs: &[f64], lo: Vec3, hi: Vec3) -> TetMesh {
    let (nx, ny, nz) = (xs.len() - 1, ys.len() - 1, zs.len() - 1);
    let idx = |i: usize, j: usize, k: usize| i + j * (nx + 1) + k * (nx + 1) * (ny + 1);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec3::new(xs[i], ys[j], zs[k]));
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in KUHN_PERMS {
                    let mut c = [i, j, k];
                    let mut t = [idx(c[0], c[1], c[2]), 0, 0, 0];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let tet_tags = vec![1; tets.len()];
    let (facets, facet_tags) = boundary_from_tets(&vertices, &tets, |c| box_face_tag(c, lo, hi));
    TetMesh::new(vertices, tets, tet_tags, facets, facet_tags).expect("structured mesh is valid")
}

fn box_face_tag(c: Vec3, lo: Vec3, hi: Vec3) -> i32 {
    let eps = 1e-9 * (hi - lo).norm().max(1.0);
    if (c.x - lo.x).abs() < eps {
        1
    } else if (c.x - hi.x).abs() < eps {
        2
    } else if (c.y - lo.y).abs() < eps {
        3
    } else if (c.y - hi.y).abs() < eps {
        4
    } else if (c.z - lo.z).abs() < eps {
        5
    } else {
        6
    }
}

/// Extract boundary facets (element faces appearing exactly once) and tag
/// them by their barycenter.
pub fn boundary_from_tets(
    vertices: &[Vec3],
    tets: &[[usize; 4]],
    tag_of: impl Fn(Vec3) -> i32,
) -> (Vec<[usize; 3]>, Vec<i32>) {
    let mut faces: HashMap<[usize; 3], u32> = HashMap::new();
    for t in tets {
        for f in [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
            *faces.entry(face_key(t[f[0]], t[f[1]], t[f[2]])).or_insert(0) += 1;
        }
    }
    let mut boundary: Vec<[usize; 3]> = faces
        .into_iter()
        .filter_map(|(f, n)| (n == 1).then_some(f))
        .collect();
    boundary.sort_unstable();
    let tags = boundary
        .iter()
        .map(|f| tag_of((vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0))
        .collect();
    (boundary, tags)
}

/// Unit-cube mesh with a rectangular hole cut out. Hole faces must align with
/// the `n`-grid. Outer surface facets carry tag 1, hole surface facets tag 2.
pub fn cube_with_hole_mesh(n: usize, hole_lo: Vec3, hole_hi: Vec3) -> Result<TetMesh> {
    let h = 1.0 / n as f64;
    for d in 0..3 {
        for v in [hole_lo[d], hole_hi[d]] {
            let cells = v / h;
            if (cells - cells.round()).abs() > 1e-9 {
                return Err(Error::GridMismatch(format!(
                    "hole coordinate {v} is not a multiple of the cell size {h}"
                )));
            }
        }
        if hole_hi[d] <= hole_lo[d] || hole_lo[d] < 0.0 || hole_hi[d] > 1.0 {
            return Err(Error::GridMismatch("hole must be a nonempty sub-box".into()));
        }
    }
    let full = uniform_cube_mesh(n, Vec3::zeros(), Vec3::repeat(1.0));
    let mut keep_tets = Vec::new();
    for (e, t) in full.tets().iter().enumerate() {
        let c = full.barycenter(e);
        let inside = (0..3).all(|d| c[d] > hole_lo[d] && c[d] < hole_hi[d]);
        if !inside {
            keep_tets.push(*t);
        }
    }
    // compact vertex ids
    let mut remap = vec![usize::MAX; full.n_vertices()];
    let mut vertices = Vec::new();
    for t in &mut keep_tets {
        for v in t.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = vertices.len();
                vertices.push(full.vertex(*v));
            }
            *v = remap[*v];
        }
    }
    let eps = 1e-9;
    let on_outer = |c: Vec3| {
        (0..3).any(|d| c[d].abs() < eps || (c[d] - 1.0).abs() < eps)
    };
    let (facets, facet_tags) =
        boundary_from_tets(&vertices, &keep_tets, |c| if on_outer(c) { 1 } else { 2 });
    let tet_tags = vec![1; keep_tets.len()];
    TetMesh::new(vertices, keep_tets, tet_tags, facets, facet_tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cube_counts_match_6n3() {
        assert_eq!(uniform_cube_mesh(4, Vec3::zeros(), Vec3::repeat(1.0)).n_elements(), 384);
        assert_eq!(
            uniform_cube_mesh(16, Vec3::zeros(), Vec3::repeat(1.0)).n_elements(),
            24_576
        );
    }

    #[test]
    fn single_cell_cube() {
        let m = uniform_cube_mesh(1, Vec3::zeros(), Vec3::repeat(1.0));
        assert_eq!(m.n_elements(), 6);
        assert_eq!(m.n_vertices(), 8);
        assert_eq!(m.n_facets(), 12);
        for e in 0..6 {
            assert_relative_eq!(m.volume(e), 1.0 / 6.0, epsilon = 1e-14);
        }
        assert_relative_eq!(m.total_volume(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn volume_conservation_on_boxes() {
        let m = uniform_box_mesh(3, 2, 4, Vec3::new(-1.0, 0.0, 2.0), Vec3::new(2.0, 5.0, 3.0), true);
        assert_relative_eq!(m.total_volume(), 3.0 * 5.0 * 1.0, max_relative = 1e-10);
        assert_eq!(m.n_elements(), 6 * 3 * 2 * 4);
    }

    #[test]
    fn interior_faces_shared_by_two() {
        let m = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let mut faces: HashMap<[usize; 3], u32> = HashMap::new();
        for t in m.tets() {
            for f in [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
                *faces.entry(face_key(t[f[0]], t[f[1]], t[f[2]])).or_insert(0) += 1;
            }
        }
        assert!(faces.values().all(|&n| n == 1 || n == 2));
        let boundary = faces.values().filter(|&&n| n == 1).count();
        assert_eq!(boundary, m.n_facets());
    }

    #[test]
    fn hole_mesh_counts() {
        let m = cube_with_hole_mesh(5, Vec3::repeat(0.4), Vec3::repeat(0.6)).unwrap();
        assert_eq!(m.n_elements(), 744);
        let m10 = cube_with_hole_mesh(10, Vec3::repeat(0.4), Vec3::repeat(0.6)).unwrap();
        assert_eq!(m10.n_elements(), 5_952);
        assert_relative_eq!(m10.total_volume(), 1.0 - 0.2_f64.powi(3), max_relative = 1e-10);
        // hole facets tagged 2, outer tagged 1
        assert!(m10.facet_tags().iter().any(|&t| t == 2));
        assert!(m10.facet_tags().iter().any(|&t| t == 1));
    }

    #[test]
    fn hole_must_align() {
        assert!(matches!(
            cube_with_hole_mesh(7, Vec3::repeat(0.4), Vec3::repeat(0.6)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn orientation_fix_on_negative_tet() {
        let vertices = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        // swapped order gives negative volume before the fix
        let m = TetMesh::new(vertices, vec![[0, 1, 3, 2]], vec![1], vec![], vec![]).unwrap();
        assert!(m.volume(0) > 0.0);
    }

    #[test]
    fn facet_not_on_boundary_is_rejected() {
        let m = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        // take an interior face: face of tet 0 shared with another tet
        let t = m.tet(0);
        let interior = [t[0], t[1], t[2]];
        let bad = TetMesh::new(
            m.vertices().to_vec(),
            m.tets().to_vec(),
            m.tet_tags().to_vec(),
            vec![interior],
            vec![1],
        );
        // the chosen face may happen to be boundary for tet 0; accept either
        // rejection or a consistent mesh, but never a panic
        if let Err(e) = bad {
            assert!(matches!(e, Error::Topology(_)));
        }
    }
}
