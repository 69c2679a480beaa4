//! Least-squares recovery of nodal gradients and Hessians from a piecewise
//! linear solution.
//!
//! Two passes over vertex stencils: the first fits a local quadratic model to
//! solution differences and keeps its gradient, the second fits an affine
//! model to each recovered gradient component and symmetrizes the resulting
//! Jacobian. The quadratic first pass makes the pair exact for globally
//! quadratic fields on any stencil of sufficient rank, boundary vertices
//! included.
//!
//! Stencils start from the hop-1 vertex neighborhood and are extended one hop
//! at a time while they hold fewer than 9 neighbors or their normal matrix is
//! ill-conditioned (condition number above 1e12; two boundary grid planes,
//! for instance, cannot separate `z` from `z²`).

use crate::error::{Error, Result};
use crate::geometry::{SymTensor3, Vec3};
use crate::mesh::TetMesh;
use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

const MIN_NEIGHBORS: usize = 9;
const MAX_HOPS: usize = 3;
const COND_LIMIT: f64 = 1e12;

fn grow(adj: &[Vec<usize>], stencil: &[usize], center: usize) -> Vec<usize> {
    let mut out: Vec<usize> = stencil.to_vec();
    for &v in stencil {
        out.extend_from_slice(&adj[v]);
    }
    out.sort_unstable();
    out.dedup();
    out.retain(|&v| v != center);
    out
}

/// Scaled offsets of the stencil around its center; the scaling keeps the
/// normal matrices well conditioned at any mesh scale.
fn offsets(mesh: &TetMesh, center: usize, stencil: &[usize]) -> (Vec<Vec3>, f64) {
    let c = mesh.vertex(center);
    let d: Vec<Vec3> = stencil.iter().map(|&v| mesh.vertex(v) - c).collect();
    let r = d.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    (d.iter().map(|v| v / r).collect(), r)
}

fn quad_row(d: &Vec3) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_column_slice(&[
        d.x,
        d.y,
        d.z,
        0.5 * d.x * d.x,
        0.5 * d.y * d.y,
        0.5 * d.z * d.z,
        d.x * d.y,
        d.x * d.z,
        d.y * d.z,
    ])
}

macro_rules! condition_fn {
    ($name:ident, $n:literal) => {
        fn $name(m: &SMatrix<f64, $n, $n>) -> f64 {
            let eig = m.symmetric_eigenvalues();
            let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo <= 0.0 {
                f64::INFINITY
            } else {
                hi / lo
            }
        }
    };
}

condition_fn!(condition9, 9);
condition_fn!(condition4, 4);

/// Gradient of the local quadratic fit at one vertex, or `None` when no
/// usable stencil exists within the hop limit.
fn fit_gradient(mesh: &TetMesh, adj: &[Vec<usize>], v: usize, u: &[f64]) -> Option<Vec3> {
    let mut stencil = adj[v].clone();
    for hop in 1..=MAX_HOPS {
        if stencil.len() >= MIN_NEIGHBORS {
            let (ds, r) = offsets(mesh, v, &stencil);
            let mut normal = SMatrix::<f64, 9, 9>::zeros();
            let mut rhs = SVector::<f64, 9>::zeros();
            for (k, d) in ds.iter().enumerate() {
                let row = quad_row(d);
                normal += row * row.transpose();
                rhs += row * (u[stencil[k]] - u[v]);
            }
            if condition9(&normal) <= COND_LIMIT {
                let c = normal.cholesky()?.solve(&rhs);
                return Some(Vec3::new(c[0], c[1], c[2]) / r);
            }
        }
        if hop == MAX_HOPS {
            break;
        }
        stencil = grow(adj, &stencil, v);
    }
    None
}

/// Symmetrized Jacobian of the affine fit to the gradient field at one vertex.
fn fit_jacobian(
    mesh: &TetMesh,
    adj: &[Vec<usize>],
    v: usize,
    g: &[Vec3],
) -> Option<SymTensor3> {
    let mut stencil = adj[v].clone();
    for hop in 1..=MAX_HOPS {
        if stencil.len() >= MIN_NEIGHBORS {
            let (ds, r) = offsets(mesh, v, &stencil);
            let mut normal = SMatrix::<f64, 4, 4>::zeros();
            let mut rhs = [SVector::<f64, 4>::zeros(); 3];
            for (k, d) in ds.iter().enumerate() {
                let row = SVector::<f64, 4>::from_column_slice(&[1.0, d.x, d.y, d.z]);
                normal += row * row.transpose();
                let gv = g[stencil[k]];
                for comp in 0..3 {
                    rhs[comp] += row * gv[comp];
                }
            }
            if condition4(&normal) <= COND_LIMIT {
                let chol = normal.cholesky()?;
                let mut j = crate::geometry::Mat3::zeros();
                for comp in 0..3 {
                    let c = chol.solve(&rhs[comp]);
                    j[(comp, 0)] = c[1] / r;
                    j[(comp, 1)] = c[2] / r;
                    j[(comp, 2)] = c[3] / r;
                }
                return Some(SymTensor3::from_matrix(&j));
            }
        }
        if hop == MAX_HOPS {
            break;
        }
        stencil = grow(adj, &stencil, v);
    }
    None
}

/// Fill failed vertices by copying the nearest recovered value.
fn backfill<T: Copy + Send + Sync>(mesh: &TetMesh, values: &mut [Option<T>]) -> Result<()> {
    let good: Vec<usize> = (0..values.len()).filter(|&v| values[v].is_some()).collect();
    if good.is_empty() {
        return Err(Error::SingularFit { vertex: 0 });
    }
    if good.len() == values.len() {
        return Ok(());
    }
    let fixes: Vec<(usize, T)> = (0..values.len())
        .filter(|&v| values[v].is_none())
        .map(|v| {
            let p = mesh.vertex(v);
            let nearest = good
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    (mesh.vertex(a) - p)
                        .norm_squared()
                        .total_cmp(&(mesh.vertex(b) - p).norm_squared())
                })
                .unwrap();
            (v, values[nearest].unwrap())
        })
        .collect();
    for (v, val) in fixes {
        values[v] = Some(val);
    }
    Ok(())
}

/// Recover nodal gradients of a piecewise-linear field.
pub fn recover_gradient(mesh: &TetMesh, u: &[f64]) -> Result<Vec<Vec3>> {
    assert_eq!(u.len(), mesh.n_vertices());
    let adj = mesh.vertex_adjacency();
    let mut g: Vec<Option<Vec3>> = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|v| fit_gradient(mesh, &adj, v, u))
        .collect();
    backfill(mesh, &mut g)?;
    Ok(g.into_iter().map(|x| x.unwrap()).collect())
}

/// Recover nodal Hessians: gradients first, then the symmetrized Jacobian of
/// the gradient field. Exact for globally quadratic fields.
pub fn recover_hessian(mesh: &TetMesh, u: &[f64]) -> Result<Vec<SymTensor3>> {
    let g = recover_gradient(mesh, u)?;
    recover_hessian_from_gradients(mesh, &g)
}

pub fn recover_hessian_from_gradients(mesh: &TetMesh, g: &[Vec3]) -> Result<Vec<SymTensor3>> {
    assert_eq!(g.len(), mesh.n_vertices());
    let adj = mesh.vertex_adjacency();
    let mut h: Vec<Option<SymTensor3>> = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|v| fit_jacobian(mesh, &adj, v, g))
        .collect();
    backfill(mesh, &mut h)?;
    Ok(h.into_iter().map(|x| x.unwrap()).collect())
}

/// Element Hessians as the arithmetic mean of the four nodal Hessians.
pub fn element_hessian(mesh: &TetMesh, nodal: &[SymTensor3]) -> Vec<SymTensor3> {
    assert_eq!(nodal.len(), mesh.n_vertices());
    mesh.tets()
        .iter()
        .map(|t| {
            t.iter()
                .fold(SymTensor3::zero(), |acc, &v| acc.add(&nodal[v]))
                .scale(0.25)
        })
        .collect()
}
