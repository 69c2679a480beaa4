//! The four metric tensor choices driving mesh generation.
//!
//! All constructors are pure per-element maps except for the global
//! normalization parameter `α_h`, which is an order-independent reduction
//! over elements.

use crate::error::Result;
use crate::geometry::{spectral_norm, SpdTensor3, SymTensor3};
use crate::mesh::TetMesh;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Identity,
    Adap,
    Dmp,
    DmpAdap,
}

impl MetricKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "id" | "identity" => Some(Self::Identity),
            "adap" => Some(Self::Adap),
            "dmp" => Some(Self::Dmp),
            "dmpadap" | "dmp+adap" => Some(Self::DmpAdap),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "id",
            Self::Adap => "adap",
            Self::Dmp => "dmp",
            Self::DmpAdap => "dmpadap",
        }
    }

    pub fn needs_hessian(&self) -> bool {
        matches!(self, Self::Adap | Self::DmpAdap)
    }

    pub fn needs_diffusion(&self) -> bool {
        matches!(self, Self::Dmp | Self::DmpAdap)
    }
}

/// Per-element metric tensor field.
#[derive(Clone, Debug)]
pub struct MetricField {
    pub tensors: Vec<SpdTensor3>,
    /// Normalization parameter, present for the adaptive metrics.
    pub alpha_h: Option<f64>,
    /// Set when the normalization equation had no solution and the field
    /// fell back to the identity metric.
    pub fallback: bool,
}

impl MetricField {
    pub fn uniform(tensor: SpdTensor3, n: usize) -> Self {
        Self {
            tensors: vec![tensor; n],
            alpha_h: None,
            fallback: false,
        }
    }
}

/// The identity metric: uniform meshes.
pub fn metric_identity(mesh: &TetMesh) -> MetricField {
    MetricField::uniform(SpdTensor3::identity(), mesh.n_elements())
}

/// The maximum-principle metric, the inverse of the diffusion matrix per
/// element.
pub fn metric_dmp(mesh: &TetMesh, diffusion: &[SpdTensor3]) -> Result<MetricField> {
    assert_eq!(diffusion.len(), mesh.n_elements());
    let tensors: Vec<SpdTensor3> = diffusion.par_iter().map(|d| d.inverse()).collect();
    Ok(MetricField {
        tensors,
        alpha_h: None,
        fallback: false,
    })
}

/// `sqrt(det M_adap)` as a function of the eigenvalues of `|H|` and `α`:
/// with `A = I + |H|/α`, `det M = ‖A‖^{6/5}·det(A)^{2/5}`.
fn sqrt_det_adap(abs_eigs: &[f64; 3], alpha: f64) -> f64 {
    let a = [
        1.0 + abs_eigs[0] / alpha,
        1.0 + abs_eigs[1] / alpha,
        1.0 + abs_eigs[2] / alpha,
    ];
    let norm = a[0].max(a[1]).max(a[2]);
    let det = a[0] * a[1] * a[2];
    norm.powf(0.6) * det.powf(0.2)
}

/// Interpolation-error metric built from recovered element Hessians, with
/// `α_h` normalized so the total metric volume is twice the domain volume.
///
/// When that equation has no solution (for instance `H ≡ 0`), the field falls
/// back to the identity metric and sets the `fallback` flag.
pub fn metric_adap(mesh: &TetMesh, hessians: &[SymTensor3]) -> MetricField {
    assert_eq!(hessians.len(), mesh.n_elements());
    let n = mesh.n_elements();
    let abs_eigs: Vec<[f64; 3]> = hessians
        .par_iter()
        .map(|h| {
            let e = h.eigenvalues();
            [e[0].abs(), e[1].abs(), e[2].abs()]
        })
        .collect();
    let omega: f64 = mesh.total_volume();
    let target = 2.0 * omega;
    let hbar = abs_eigs
        .iter()
        .map(|e| e[0].max(e[1]).max(e[2]))
        .sum::<f64>()
        / n as f64;
    let total = |alpha: f64| -> f64 {
        (0..n)
            .map(|e| mesh.volume(e) * sqrt_det_adap(&abs_eigs[e], alpha))
            .sum()
    };
    let mut lo = 1e-12 * hbar;
    let mut hi = 1e12 * hbar;
    if hbar == 0.0 || total(lo) < target {
        return MetricField {
            tensors: vec![SpdTensor3::identity(); n],
            alpha_h: None,
            fallback: true,
        };
    }
    // total(α) decreases monotonically from +inf to |Ω| < 2|Ω|, so bisection
    // (log midpoint) is safe
    let mut alpha = (lo * hi).sqrt();
    for _ in 0..200 {
        alpha = (lo * hi).sqrt();
        let t = total(alpha);
        if (t - target).abs() <= 1e-9 * target {
            break;
        }
        if t > target {
            lo = alpha;
        } else {
            hi = alpha;
        }
    }
    let tensors: Vec<SpdTensor3> = hessians
        .par_iter()
        .map(|h| {
            let a = h.abs_eigen().scale(1.0 / alpha).add(&SymTensor3::identity());
            let e = a.eigenvalues();
            let norm = e[2];
            let det = e[0] * e[1] * e[2];
            SpdTensor3::new_unchecked(a.scale(norm.powf(0.4) * det.powf(-0.2)))
        })
        .collect();
    MetricField {
        tensors,
        alpha_h: Some(alpha),
        fallback: false,
    }
}

/// Combined maximum-principle and adaptation metric: proportional to the
/// inverse diffusion matrix with a scalar factor driven by the Hessian.
pub fn metric_dmp_adap(
    mesh: &TetMesh,
    diffusion: &[SpdTensor3],
    hessians: &[SymTensor3],
) -> Result<MetricField> {
    assert_eq!(diffusion.len(), mesh.n_elements());
    assert_eq!(hessians.len(), mesh.n_elements());
    let n = mesh.n_elements();
    let b: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|e| {
            let d = &diffusion[e];
            let dh = d.matrix() * hessians[e].abs_eigen().matrix();
            d.det().powf(-1.0 / 3.0) * d.inverse().spectral_norm() * spectral_norm(&dh).powi(2)
        })
        .collect();
    let omega = mesh.total_volume();
    let alpha = ((0..n)
        .map(|e| mesh.volume(e) * b[e].powf(0.6))
        .sum::<f64>()
        / omega)
        .powf(5.0 / 3.0);
    let tensors: Vec<SpdTensor3> = (0..n)
        .into_par_iter()
        .map(|e| {
            let d = &diffusion[e];
            let factor = if alpha > 0.0 {
                (1.0 + b[e] / alpha).powf(0.4)
            } else {
                1.0
            };
            SpdTensor3::new_unchecked(
                d.inverse().sym().scale(factor * d.det().powf(1.0 / 3.0)),
            )
        })
        .collect();
    Ok(MetricField {
        tensors,
        alpha_h: Some(alpha),
        fallback: false,
    })
}

/// Vertex metric tensors as volume-weighted averages of adjacent element
/// tensors (the form MMG-family remeshers expect).
pub fn vertex_metric(mesh: &TetMesh, metric: &MetricField) -> Vec<SymTensor3> {
    let mut acc = vec![SymTensor3::zero(); mesh.n_vertices()];
    let mut weight = vec![0.0; mesh.n_vertices()];
    for (e, t) in mesh.tets().iter().enumerate() {
        let w = mesh.volume(e);
        for &v in t {
            acc[v] = acc[v].add(&metric.tensors[e].sym().scale(w));
            weight[v] += w;
        }
    }
    acc.iter()
        .zip(&weight)
        .map(|(a, &w)| a.scale(1.0 / w))
        .collect()
}
