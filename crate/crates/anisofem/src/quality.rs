//! Mesh quality measures and maximum-principle sufficient conditions.

use crate::error::Result;
use crate::geometry::{condition_matrix, with_reference, ElementMap, SpdTensor3};
use crate::mesh::TetMesh;
use crate::metric::MetricField;
use rayon::prelude::*;

/// Bound of the eigenvalue-ratio sufficient condition,
/// `min(1 + 1/d, (1 - 1/d)^{-1/(d-1)})`: 1.5 in 2D, `sqrt(3/2)` in 3D.
pub fn mp_bound(d: usize) -> f64 {
    assert!(d >= 2);
    let d = d as f64;
    (1.0 + 1.0 / d).min((1.0 - 1.0 / d).powf(-1.0 / (d - 1.0)))
}

/// The anisotropic non-obtuse angle condition: all six pair values
/// `q̂ᵢᵀ (F')⁻¹ D (F')⁻ᵀ q̂ⱼ`, `i < j`, and whether they are nonpositive
/// within a relative tolerance of the condition-matrix norm.
pub fn check_nonobtuse(map: &ElementMap, d: &SpdTensor3) -> ([f64; 6], bool) {
    let a = condition_matrix(map, d);
    let tol = 1e-12 * a.spectral_norm();
    let mut pairs = [0.0; 6];
    let mut k = 0;
    with_reference(|r| {
        for i in 0..4 {
            for j in (i + 1)..4 {
                pairs[k] = r.inward_normals[i].dot(&(a.matrix() * r.inward_normals[j]));
                k += 1;
            }
        }
    });
    let ok = pairs.iter().all(|&p| p <= tol);
    (pairs, ok)
}

fn eig_ratio_stats(a: &SpdTensor3) -> (f64, f64, f64) {
    let e = a.eigenvalues();
    let det3 = (e[0] * e[1] * e[2]).powf(1.0 / 3.0);
    (e[0] / det3, e[2] / det3, det3)
}

/// Sufficient condition `‖A / det(A)^{1/3} − I‖ ≤ 1/3`.
pub fn check_cond4(map: &ElementMap, d: &SpdTensor3) -> bool {
    let a = condition_matrix(map, d);
    let (lo, hi, _) = eig_ratio_stats(&a);
    (lo - 1.0).abs().max((hi - 1.0).abs()) <= 1.0 / 3.0 + 1e-14
}

/// Sufficient condition `‖A‖ / det(A)^{1/3} ≤ mp_bound(3)`.
pub fn check_cond5(map: &ElementMap, d: &SpdTensor3) -> bool {
    let a = condition_matrix(map, d);
    let (_, hi, _) = eig_ratio_stats(&a);
    hi <= mp_bound(3) + 1e-14
}

/// Alignment measure `‖A‖ / det(A)^{1/3}` with `A = (F')⁻¹ M⁻¹ (F')⁻ᵀ`.
pub fn q_ali(map: &ElementMap, metric: &SpdTensor3) -> f64 {
    let a = condition_matrix(map, &metric.inverse());
    let (_, hi, _) = eig_ratio_stats(&a);
    hi
}

/// Trace variant `tr(A) / (3 det(A)^{1/3})` of the alignment measure.
pub fn q_ali_trace(map: &ElementMap, metric: &SpdTensor3) -> f64 {
    let a = condition_matrix(map, &metric.inverse());
    let e = a.eigenvalues();
    let det3 = (e[0] * e[1] * e[2]).powf(1.0 / 3.0);
    (e[0] + e[1] + e[2]) / (3.0 * det3)
}

/// Equidistribution measures `N |K| det(M_K)^{1/2} / σ_h` and the total
/// metric volume `σ_h`.
pub fn q_eq(mesh: &TetMesh, metric: &MetricField) -> (Vec<f64>, f64) {
    let n = mesh.n_elements();
    assert_eq!(metric.tensors.len(), n);
    let contrib: Vec<f64> = (0..n)
        .map(|e| mesh.volume(e) * metric.tensors[e].det().sqrt())
        .collect();
    let sigma: f64 = contrib.iter().sum();
    let q = contrib.iter().map(|c| n as f64 * c / sigma).collect();
    (q, sigma)
}

/// Per-element quality values, their norms over the mesh and the
/// maximum-principle condition flags.
#[derive(Clone, Debug)]
pub struct QualityReport {
    pub q_eq: Vec<f64>,
    pub q_ali: Vec<f64>,
    pub q_ali_trace: Vec<f64>,
    pub mp_ok: Vec<bool>,
    pub cond5_ok: Vec<bool>,
    pub norm_qeq_l2: f64,
    pub norm_qali_l2: f64,
    pub norm_qali_linf: f64,
    pub sigma_h: f64,
    pub mp_pass_count: usize,
}

impl QualityReport {
    /// Key-value lines for the machine-readable report stream.
    pub fn summary_lines(&self) -> Vec<(String, String)> {
        vec![
            ("n_elements".into(), format!("{}", self.q_eq.len())),
            ("qeq_l2".into(), format!("{:.6}", self.norm_qeq_l2)),
            ("qali_l2".into(), format!("{:.6}", self.norm_qali_l2)),
            ("qali_linf".into(), format!("{:.6}", self.norm_qali_linf)),
            ("sigma_h".into(), format!("{:.12e}", self.sigma_h)),
            ("mp_pass_count".into(), format!("{}", self.mp_pass_count)),
            (
                "mp_all_pass".into(),
                format!("{}", self.mp_pass_count == self.q_eq.len()),
            ),
        ]
    }
}

/// `L²` norm of a per-element quantity: volume-weighted RMS normalized by the
/// domain volume, so uniform fields report exactly the element value.
pub fn l2_norm(mesh: &TetMesh, q: &[f64]) -> f64 {
    let omega = mesh.total_volume();
    let s: f64 = (0..mesh.n_elements())
        .map(|e| mesh.volume(e) * q[e] * q[e])
        .sum();
    (s / omega).sqrt()
}

/// Full quality report for a mesh under a metric field, with MP flags
/// evaluated against the per-element diffusion tensors.
pub fn report(
    mesh: &TetMesh,
    metric: &MetricField,
    diffusion: &[SpdTensor3],
) -> Result<QualityReport> {
    let n = mesh.n_elements();
    assert_eq!(diffusion.len(), n);
    let (q_eq, sigma_h) = q_eq(mesh, metric);
    let per_element: Vec<(f64, f64, bool, bool)> = (0..n)
        .into_par_iter()
        .map(|e| {
            let map = mesh.element_map(e)?;
            let qa = q_ali(&map, &metric.tensors[e]);
            let qt = q_ali_trace(&map, &metric.tensors[e]);
            let (_, mp) = check_nonobtuse(&map, &diffusion[e]);
            let c5 = check_cond5(&map, &diffusion[e]);
            Ok((qa, qt, mp, c5))
        })
        .collect::<Result<_>>()?;
    let q_ali: Vec<f64> = per_element.iter().map(|t| t.0).collect();
    let q_ali_trace: Vec<f64> = per_element.iter().map(|t| t.1).collect();
    let mp_ok: Vec<bool> = per_element.iter().map(|t| t.2).collect();
    let cond5_ok: Vec<bool> = per_element.iter().map(|t| t.3).collect();
    let mp_pass_count = mp_ok.iter().filter(|&&b| b).count();
    Ok(QualityReport {
        norm_qeq_l2: l2_norm(mesh, &q_eq),
        norm_qali_l2: l2_norm(mesh, &q_ali),
        norm_qali_linf: q_ali.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        sigma_h,
        mp_pass_count,
        q_eq,
        q_ali,
        q_ali_trace,
        mp_ok,
        cond5_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ElementMap, Vec3};
    use crate::mesh::uniform_cube_mesh;
    use crate::metric::metric_identity;
    use approx::assert_relative_eq;

    fn reference_map() -> ElementMap {
        let v = with_reference(|r| r.vertices);
        ElementMap::from_vertices(0, &v, 1.0).unwrap()
    }

    #[test]
    fn mp_bound_values() {
        assert_relative_eq!(mp_bound(2), 1.5, epsilon = 1e-15);
        assert_relative_eq!(mp_bound(3), 1.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(mp_bound(4), 0.75f64.powf(-1.0 / 3.0), epsilon = 1e-12);
    }

    #[test]
    fn reference_tet_pairs_are_minus_third() {
        let map = reference_map();
        let (pairs, ok) = check_nonobtuse(&map, &SpdTensor3::identity());
        assert!(ok);
        for p in pairs {
            assert_relative_eq!(p, -1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_tet_alignment_is_one() {
        let map = reference_map();
        assert_relative_eq!(q_ali(&map, &SpdTensor3::identity()), 1.0, epsilon = 1e-12);
        assert_relative_eq!(q_ali_trace(&map, &SpdTensor3::identity()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_element_norms_equal_element_values() {
        let v = with_reference(|r| r.vertices);
        let mesh = TetMesh::new(v.to_vec(), vec![[0, 1, 2, 3]], vec![1], vec![], vec![]).unwrap();
        let m = SpdTensor3::diagonal(4.0, 1.0, 0.5).unwrap();
        let metric = MetricField::uniform(m, 1);
        let d = vec![SpdTensor3::identity(); 1];
        let rep = report(&mesh, &metric, &d).unwrap();
        let map = mesh.element_map(0).unwrap();
        assert_relative_eq!(rep.norm_qali_l2, q_ali(&map, &m), max_relative = 1e-12);
        assert_relative_eq!(rep.norm_qali_linf, q_ali(&map, &m), max_relative = 1e-12);
        assert_relative_eq!(rep.norm_qeq_l2, 1.0, max_relative = 1e-12);
    }

    use crate::metric::MetricField;

    #[test]
    fn mapped_reference_cancels_anisotropy() {
        // element = image of reference tet under D^{1/2}
        let d = SpdTensor3::diagonal(100.0, 10.0, 1.0).unwrap();
        let s = d.sqrt();
        let v = with_reference(|r| r.vertices.map(|p| s.matrix() * p));
        let map = ElementMap::from_vertices(0, &v, 20.0).unwrap();
        let (pairs, ok) = check_nonobtuse(&map, &d);
        assert!(ok);
        for p in pairs {
            assert_relative_eq!(p, -1.0 / 3.0, epsilon = 1e-10);
        }
        assert_relative_eq!(q_ali(&map, &d.inverse()), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn corner_tet_is_nonobtuse_but_not_cond5() {
        let p = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let map = ElementMap::from_vertices(0, &p, 2.0).unwrap();
        let (pairs, ok) = check_nonobtuse(&map, &SpdTensor3::identity());
        assert!(ok, "corner tet pairs: {pairs:?}");
        assert!(!check_cond5(&map, &SpdTensor3::identity()));
    }

    #[test]
    fn kuhn_mesh_worst_alignment() {
        let mesh = uniform_cube_mesh(1, Vec3::zeros(), Vec3::repeat(1.0));
        let id = SpdTensor3::identity();
        let mut worst: f64 = 0.0;
        for e in 0..mesh.n_elements() {
            let map = mesh.element_map(e).unwrap();
            let (_, ok) = check_nonobtuse(&map, &id);
            assert!(ok);
            assert!(!check_cond5(&map, &id));
            worst = worst.max(q_ali(&map, &id));
        }
        assert_relative_eq!(worst, 2.151, epsilon = 0.01);
    }

    #[test]
    fn q_eq_identities() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let (q, _) = q_eq(&mesh, &metric);
        let total: f64 = q.iter().sum();
        assert_relative_eq!(total, mesh.n_elements() as f64, max_relative = 1e-12);
        for x in &q {
            assert_relative_eq!(*x, 1.0, max_relative = 1e-12);
        }
        assert_relative_eq!(l2_norm(&mesh, &q), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn q_eq_two_volume_configuration() {
        // one element at twice the volume of the others: q_eq = 2N/(N+1)
        let vertices = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -2.0),
        ];
        let tets = vec![[0, 1, 2, 3], [0, 1, 2, 4]];
        let mesh = TetMesh::new(vertices, tets, vec![1, 1], vec![], vec![]).unwrap();
        let metric = metric_identity(&mesh);
        let (q, _) = q_eq(&mesh, &metric);
        let n = 2.0;
        assert_relative_eq!(q[1], 2.0 * n / (n + 1.0), max_relative = 1e-12);
    }

    #[test]
    fn trace_norm_equivalence() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let m = SpdTensor3::diagonal(9.0, 1.0, 0.25).unwrap();
        for e in 0..mesh.n_elements() {
            let map = mesh.element_map(e).unwrap();
            let qa = q_ali(&map, &m);
            let qt = q_ali_trace(&map, &m);
            assert!(qt <= qa * (1.0 + 1e-12) && qa <= 3.0 * qt * (1.0 + 1e-12));
            assert!(qa >= 1.0 - 1e-12 && qt >= 1.0 - 1e-12);
        }
    }

    use crate::mesh::TetMesh;

    #[test]
    fn report_on_uniform_mesh() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let d = vec![SpdTensor3::identity(); mesh.n_elements()];
        let rep = report(&mesh, &metric, &d).unwrap();
        assert_relative_eq!(rep.norm_qeq_l2, 1.0, max_relative = 1e-10);
        assert_eq!(rep.mp_pass_count, mesh.n_elements());
        assert_relative_eq!(rep.norm_qali_linf, 2.151, epsilon = 0.01);
        assert!(rep.norm_qali_linf >= 1.0);
    }
}
