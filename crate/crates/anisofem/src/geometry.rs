//! Reference element, per-element affine maps and symmetric 3x3 tensors.
//!
//! The reference element is a unitary equilateral tetrahedron. Every element
//! `K` of a mesh is the image of the reference element under an affine map
//! `x = F' x̂ + b`; the matrix quantity `(F')⁻¹ T (F')⁻ᵀ` built from that map
//! and a symmetric positive definite tensor `T` is what all mesh-quality and
//! maximum-principle conditions are expressed in.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Volume of the unitary equilateral reference tetrahedron, `sqrt(2)/12`.
pub const REFERENCE_VOLUME: f64 = 0.11785113019775792;

/// Symmetric 3x3 tensor. Not necessarily positive definite (recovered
/// Hessians, for instance, are only symmetric).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor3 {
    m: Mat3,
}

impl SymTensor3 {
    /// Build from an arbitrary matrix, symmetrizing `(M + Mᵀ)/2`.
    pub fn from_matrix(m: &Mat3) -> Self {
        Self {
            m: (m + m.transpose()) * 0.5,
        }
    }

    /// Lower-triangle row order `a11 a21 a22 a31 a32 a33` (the MEDIT `.sol`
    /// tensor convention).
    pub fn from_lower(v: [f64; 6]) -> Self {
        Self {
            m: Mat3::new(v[0], v[1], v[3], v[1], v[2], v[4], v[3], v[4], v[5]),
        }
    }

    pub fn to_lower(&self) -> [f64; 6] {
        [
            self.m[(0, 0)],
            self.m[(1, 0)],
            self.m[(1, 1)],
            self.m[(2, 0)],
            self.m[(2, 1)],
            self.m[(2, 2)],
        ]
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self {
            m: Mat3::from_diagonal(&Vec3::new(a, b, c)),
        }
    }

    pub fn identity() -> Self {
        Self { m: Mat3::identity() }
    }

    pub fn zero() -> Self {
        Self { m: Mat3::zeros() }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn det(&self) -> f64 {
        self.m.determinant()
    }

    /// Eigenvalues sorted ascending with matching eigenvector columns.
    pub fn eigen(&self) -> (Vec3, Mat3) {
        let eig = SymmetricEigen::new(self.m);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = Vec3::new(
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        );
        let vecs = Mat3::from_columns(&[
            eig.eigenvectors.column(order[0]).into_owned(),
            eig.eigenvectors.column(order[1]).into_owned(),
            eig.eigenvectors.column(order[2]).into_owned(),
        ]);
        (vals, vecs)
    }

    pub fn eigenvalues(&self) -> Vec3 {
        self.eigen().0
    }

    /// Spectral norm of the symmetric tensor, `max |λᵢ|`.
    pub fn spectral_norm(&self) -> f64 {
        let v = self.eigenvalues();
        v[0].abs().max(v[2].abs())
    }

    /// Eigen-decomposition with eigenvalues replaced by their absolute values.
    pub fn abs_eigen(&self) -> SymTensor3 {
        let (vals, vecs) = self.eigen();
        let d = Mat3::from_diagonal(&vals.map(f64::abs));
        SymTensor3::from_matrix(&(vecs * d * vecs.transpose()))
    }

    pub fn scale(&self, s: f64) -> SymTensor3 {
        SymTensor3 { m: self.m * s }
    }

    pub fn add(&self, other: &SymTensor3) -> SymTensor3 {
        SymTensor3 { m: self.m + other.m }
    }

    pub fn quadratic_form(&self, v: &Vec3) -> f64 {
        (v.transpose() * self.m * v)[(0, 0)]
    }
}

/// Symmetric positive definite 3x3 tensor: diffusion matrices, metric tensors,
/// permeabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdTensor3(SymTensor3);

impl SpdTensor3 {
    /// Checked constructor: all eigenvalues must be strictly positive.
    pub fn try_new(sym: SymTensor3) -> Result<Self> {
        let min = sym.eigenvalues()[0];
        if min <= 0.0 {
            return Err(Error::NotSpd(format!("smallest eigenvalue {min:.6e}")));
        }
        Ok(Self(sym))
    }

    /// For tensors known positive by construction (congruences of SPD inputs).
    pub fn new_unchecked(sym: SymTensor3) -> Self {
        Self(sym)
    }

    pub fn identity() -> Self {
        Self(SymTensor3::identity())
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::try_new(SymTensor3::diagonal(a, b, c))
    }

    pub fn from_lower(v: [f64; 6]) -> Result<Self> {
        Self::try_new(SymTensor3::from_lower(v))
    }

    pub fn sym(&self) -> &SymTensor3 {
        &self.0
    }

    pub fn matrix(&self) -> &Mat3 {
        self.0.matrix()
    }

    pub fn det(&self) -> f64 {
        self.0.det()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigenvalues(&self) -> Vec3 {
        self.0.eigenvalues()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.0.eigenvalues()[2]
    }

    pub fn inverse(&self) -> SpdTensor3 {
        self.powf(-1.0)
    }

    pub fn sqrt(&self) -> SpdTensor3 {
        self.powf(0.5)
    }

    pub fn inv_sqrt(&self) -> SpdTensor3 {
        self.powf(-0.5)
    }

    /// Matrix power through the eigen-decomposition; stays exactly symmetric.
    pub fn powf(&self, p: f64) -> SpdTensor3 {
        let (vals, vecs) = self.0.eigen();
        let d = Mat3::from_diagonal(&vals.map(|l| l.powf(p)));
        SpdTensor3(SymTensor3::from_matrix(&(vecs * d * vecs.transpose())))
    }
}

/// Spectral norm (largest singular value) of a general 3x3 matrix.
pub fn spectral_norm(m: &Mat3) -> f64 {
    let mtm = SymTensor3::from_matrix(&(m.transpose() * m));
    mtm.eigenvalues()[2].max(0.0).sqrt()
}

/// The unitary equilateral reference tetrahedron.
///
/// Coordinates are fixed as `(0,0,0)`, `(1,0,0)`, `(1/2,√3/2,0)`,
/// `(1/2,√3/6,√6/3)` so that element maps are reproducible. `q̂ᵢ` is the unit
/// inward normal to the face opposite vertex `i`; for this element
/// `q̂ᵢ·q̂ⱼ = -1/3` for `i ≠ j`.
#[derive(Clone, Debug)]
pub struct ReferenceTet {
    pub vertices: [Vec3; 4],
    pub inward_normals: [Vec3; 4],
    edge_matrix: Mat3,
    edge_matrix_inv: Mat3,
}

impl ReferenceTet {
    pub fn new() -> Self {
        let sqrt3 = 3.0_f64.sqrt();
        let sqrt6 = 6.0_f64.sqrt();
        let vertices = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, sqrt3 / 2.0, 0.0),
            Vec3::new(0.5, sqrt3 / 6.0, sqrt6 / 3.0),
        ];
        let mut inward_normals = [Vec3::zeros(); 4];
        for i in 0..4 {
            let f: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            let n = (vertices[f[1]] - vertices[f[0]])
                .cross(&(vertices[f[2]] - vertices[f[0]]))
                .normalize();
            inward_normals[i] = if (vertices[i] - vertices[f[0]]).dot(&n) > 0.0 {
                n
            } else {
                -n
            };
        }
        let edge_matrix = Mat3::from_columns(&[
            vertices[1] - vertices[0],
            vertices[2] - vertices[0],
            vertices[3] - vertices[0],
        ]);
        let edge_matrix_inv = edge_matrix.try_inverse().unwrap();
        Self {
            vertices,
            inward_normals,
            edge_matrix,
            edge_matrix_inv,
        }
    }

    pub fn volume(&self) -> f64 {
        REFERENCE_VOLUME
    }
}

impl Default for ReferenceTet {
    fn default() -> Self {
        Self::new()
    }
}

thread_local! {
    static REFERENCE: ReferenceTet = ReferenceTet::new();
}

/// Run a closure with the (cached) reference tetrahedron.
pub fn with_reference<R>(f: impl FnOnce(&ReferenceTet) -> R) -> R {
    REFERENCE.with(f)
}

/// Affine map `x = F' x̂ + b` from the reference tetrahedron onto an element.
#[derive(Clone, Debug)]
pub struct ElementMap {
    pub jacobian: Mat3,
    pub jacobian_inv: Mat3,
    pub translation: Vec3,
    pub volume: f64,
}

impl ElementMap {
    /// Build the map for four element vertices (in stored order).
    ///
    /// `scale` is a characteristic length of the surrounding geometry (the
    /// mesh bounding-box diagonal); degeneracy is flagged when the edge-matrix
    /// determinant falls below `1e-30 · scale³`. Pass 0 to fall back to the
    /// element's own bounding box.
    pub fn from_vertices(element: usize, p: &[Vec3; 4], scale: f64) -> Result<Self> {
        let e = Mat3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let det = e.determinant();
        let scale = if scale > 0.0 {
            scale
        } else {
            let lo = Vec3::new(
                p.iter().map(|v| v.x).fold(f64::INFINITY, f64::min),
                p.iter().map(|v| v.y).fold(f64::INFINITY, f64::min),
                p.iter().map(|v| v.z).fold(f64::INFINITY, f64::min),
            );
            let hi = Vec3::new(
                p.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max),
                p.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max),
                p.iter().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max),
            );
            (hi - lo).norm()
        };
        if det.abs() <= 1e-30 * scale.powi(3) {
            return Err(Error::DegenerateElement {
                element,
                detail: format!("edge-matrix determinant {det:.3e} at scale {scale:.3e}"),
            });
        }
        let (jacobian, jacobian_inv, translation) = with_reference(|r| {
            let j = e * r.edge_matrix_inv;
            (j, r.edge_matrix * e.try_inverse().unwrap(), p[0])
        });
        Ok(Self {
            jacobian,
            jacobian_inv,
            translation,
            volume: det.abs() / 6.0,
        })
    }

    /// Image of a reference-element point.
    pub fn map_point(&self, xhat: &Vec3) -> Vec3 {
        self.jacobian * xhat + self.translation
    }
}

/// `(F')⁻¹ T (F')⁻ᵀ`, symmetrized. Positive definite whenever `T` is.
pub fn condition_matrix(map: &ElementMap, t: &SpdTensor3) -> SpdTensor3 {
    let a = map.jacobian_inv * t.matrix() * map.jacobian_inv.transpose();
    SpdTensor3::new_unchecked(SymTensor3::from_matrix(&a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_vertices() -> [Vec3; 4] {
        with_reference(|r| r.vertices)
    }

    #[test]
    fn reference_tet_is_unitary_equilateral() {
        let v = reference_vertices();
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_relative_eq!((v[i] - v[j]).norm(), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn inward_normal_products_are_minus_third() {
        with_reference(|r| {
            for i in 0..4 {
                assert_relative_eq!(r.inward_normals[i].norm(), 1.0, epsilon = 1e-14);
                for j in (i + 1)..4 {
                    assert_relative_eq!(
                        r.inward_normals[i].dot(&r.inward_normals[j]),
                        -1.0 / 3.0,
                        epsilon = 1e-14
                    );
                }
            }
        });
    }

    #[test]
    fn identity_map_on_reference() {
        let v = reference_vertices();
        let map = ElementMap::from_vertices(0, &v, 1.0).unwrap();
        assert_relative_eq!(map.jacobian, Mat3::identity(), epsilon = 1e-13);
        assert_relative_eq!(map.volume, REFERENCE_VOLUME, epsilon = 1e-14);
    }

    #[test]
    fn scaled_reference_doubles_jacobian() {
        let v = reference_vertices().map(|p| p * 2.0);
        let map = ElementMap::from_vertices(0, &v, 2.0).unwrap();
        assert_relative_eq!(map.jacobian, Mat3::identity() * 2.0, epsilon = 1e-13);
        assert_relative_eq!(map.volume, 8.0 * REFERENCE_VOLUME, epsilon = 1e-13);
    }

    #[test]
    fn corner_tet_map_reproduces_vertices() {
        let p = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let map = ElementMap::from_vertices(0, &p, 3.0_f64.sqrt()).unwrap();
        assert_relative_eq!(map.volume, 1.0 / 6.0, epsilon = 1e-14);
        let rv = reference_vertices();
        for i in 0..4 {
            assert_relative_eq!(map.map_point(&rv[i]), p[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn degenerate_element_is_rejected() {
        let p = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
        ];
        assert!(matches!(
            ElementMap::from_vertices(7, &p, 1.0),
            Err(Error::DegenerateElement { element: 7, .. })
        ));
    }

    #[test]
    fn condition_matrix_identity_cases() {
        let v = reference_vertices();
        let map = ElementMap::from_vertices(0, &v, 1.0).unwrap();
        let a = condition_matrix(&map, &SpdTensor3::identity());
        assert_relative_eq!(*a.matrix(), Mat3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn condition_matrix_exact_cancellation() {
        // jacobian = S, T = S Sᵀ  →  identity
        let s = Mat3::new(2.0, 0.3, -0.1, 0.0, 1.5, 0.4, 0.2, -0.2, 0.8);
        let v = reference_vertices().map(|p| s * p);
        let map = ElementMap::from_vertices(0, &v, 10.0).unwrap();
        let t = SpdTensor3::try_new(SymTensor3::from_matrix(&(s * s.transpose()))).unwrap();
        let a = condition_matrix(&map, &t);
        assert_relative_eq!(*a.matrix(), Mat3::identity(), epsilon = 1e-10);
    }

    #[test]
    fn spd_roundtrip_and_powers() {
        let t = SpdTensor3::diagonal(100.0, 10.0, 1.0).unwrap();
        let inv = t.inverse();
        assert_relative_eq!(
            inv.matrix() * t.matrix(),
            Mat3::identity(),
            epsilon = 1e-12
        );
        let s = t.sqrt();
        assert_relative_eq!(s.matrix() * s.matrix(), *t.matrix(), epsilon = 1e-10);
        assert!(SpdTensor3::diagonal(1.0, -2.0, 3.0).is_err());
    }

    #[test]
    fn abs_eigen_flips_negative_directions() {
        let h = SymTensor3::diagonal(-3.0, 0.0, 2.0);
        let a = h.abs_eigen();
        assert_relative_eq!(a.eigenvalues(), Vec3::new(0.0, 2.0, 3.0), epsilon = 1e-12);
    }
}
