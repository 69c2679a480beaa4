//! Metric-driven mesh adaptation: the solve → recover → metric → remesh loop
//! and the built-in mesh generation backends.

use crate::error::{Error, Result};
use crate::fem::{assemble_and_solve, l2_error, mp_report, FemSolution, Problem};
use crate::geometry::{SpdTensor3, Vec3};
use crate::io;
use crate::mesh::{uniform_box_mesh, TetMesh};
use crate::metric::{
    metric_adap, metric_dmp, metric_dmp_adap, metric_identity, vertex_metric, MetricField,
    MetricKind,
};
use crate::quality::{report, QualityReport};
use crate::recovery::{element_hessian, recover_hessian};
use std::collections::HashMap;
use std::collections::BinaryHeap;

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    /// Map a uniform mesh through the (constant, diagonal) metric.
    AffineMapped,
    /// Longest-metric-edge bisection of the current mesh.
    Bisection,
    /// External remesher invoked through a command template with
    /// `{in_mesh}`, `{in_sol}` and `{out_mesh}` placeholders.
    External { command: String },
}

#[derive(Clone, Debug)]
pub struct AdaptConfig {
    pub metric_kind: MetricKind,
    pub iterations: usize,
    pub target_n: usize,
    pub backend: Backend,
}

impl AdaptConfig {
    pub fn new(metric_kind: MetricKind, target_n: usize, backend: Backend) -> Self {
        Self {
            metric_kind,
            iterations: 5,
            target_n: target_n.max(6),
            backend,
        }
    }
}

/// Snapshot of one iteration of the adaptation loop, taken before the mesh is
/// regenerated.
pub struct IterationRecord {
    pub n_elements: usize,
    pub l2_error: Option<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub residual: f64,
    pub mp_violated: bool,
    pub alpha_h: Option<f64>,
    pub metric_fallback: bool,
    pub quality: QualityReport,
}

pub struct AdaptResult {
    pub mesh: TetMesh,
    pub solution: FemSolution,
    pub metric: MetricField,
    pub history: Vec<IterationRecord>,
}

fn metric_for(
    kind: MetricKind,
    mesh: &TetMesh,
    problem: &Problem,
    solution: &FemSolution,
) -> Result<MetricField> {
    match kind {
        MetricKind::Identity => Ok(metric_identity(mesh)),
        MetricKind::Dmp => metric_dmp(mesh, &problem.element_diffusion(mesh)?),
        MetricKind::Adap => {
            let h = element_hessian(mesh, &recover_hessian(mesh, &solution.u)?);
            Ok(metric_adap(mesh, &h))
        }
        MetricKind::DmpAdap => {
            let h = element_hessian(mesh, &recover_hessian(mesh, &solution.u)?);
            metric_dmp_adap(mesh, &problem.element_diffusion(mesh)?, &h)
        }
    }
}

/// Run the adaptive solution procedure: solve the PDE, recover derivatives
/// and build the metric, generate a new mesh, `iterations` times; a final
/// solve on the last mesh closes the loop. The history keeps one record per
/// solve so stagnating quality is observable.
pub fn adapt_loop(
    problem: &Problem,
    initial_mesh: &TetMesh,
    config: &AdaptConfig,
) -> Result<AdaptResult> {
    assert!(config.iterations >= 1);
    let mut mesh = initial_mesh.clone();
    let mut history = Vec::with_capacity(config.iterations + 1);
    let n0 = mesh.n_elements();
    let mut last: Option<(FemSolution, MetricField)> = None;
    for it in 0..=config.iterations {
        let solution = assemble_and_solve(&mesh, problem)?;
        let metric = metric_for(config.metric_kind, &mesh, problem, &solution)?;
        let diffusion = problem.element_diffusion(&mesh)?;
        let quality = report(&mesh, &metric, &diffusion)?;
        let l2 = problem
            .exact
            .as_ref()
            .map(|exact| l2_error(&mesh, &solution.u, &|x| exact(x)));
        history.push(IterationRecord {
            n_elements: mesh.n_elements(),
            l2_error: l2,
            u_min: solution.u_min,
            u_max: solution.u_max,
            residual: solution.residual,
            mp_violated: mp_report(&mesh, &solution).violated,
            alpha_h: metric.alpha_h,
            metric_fallback: metric.fallback,
            quality,
        });
        if it == config.iterations {
            last = Some((solution, metric));
            break;
        }
        // ramp the element budget so each bisection pass refines further
        let step_target = if config.target_n > n0 {
            n0 + (config.target_n - n0) * (it + 1) / config.iterations
        } else {
            config.target_n
        };
        mesh = match &config.backend {
            Backend::AffineMapped => match constant_diagonal_metric(&metric) {
                Some(t) if is_box_domain(&mesh) => {
                    let (lo, hi) = mesh.bbox();
                    generate_affine_mapped(&t, config.target_n, lo, hi)?
                }
                _ => generate_bisection(&mesh, &metric, step_target)?,
            },
            Backend::Bisection => generate_bisection(&mesh, &metric, step_target)?,
            Backend::External { command } => external_mesher_roundtrip(&mesh, &metric, command)?,
        };
    }
    let (solution, metric) = last.unwrap();
    Ok(AdaptResult {
        mesh,
        solution,
        metric,
        history,
    })
}

fn constant_diagonal_metric(metric: &MetricField) -> Option<SpdTensor3> {
    let t0 = metric.tensors.first()?;
    let scale = t0.spectral_norm();
    for t in &metric.tensors {
        let diff = t.matrix() - t0.matrix();
        if diff.norm() > 1e-10 * scale {
            return None;
        }
    }
    let m = t0.matrix();
    let off = m[(0, 1)].abs().max(m[(0, 2)].abs()).max(m[(1, 2)].abs());
    (off <= 1e-12 * scale).then_some(*t0)
}

fn is_box_domain(mesh: &TetMesh) -> bool {
    let (lo, hi) = mesh.bbox();
    let box_vol = (hi - lo).iter().product::<f64>();
    (mesh.total_volume() - box_vol).abs() <= 1e-8 * box_vol
}

/// Mesh a box domain uniformly in the metric: for a constant diagonal metric
/// the pre-image of the box under `M^{1/2}` is again a box, which is meshed
/// with cubic cells and mapped back, giving cell aspect ratios
/// `1/sqrt(M_ii)`. Non-diagonal metrics would need a non-box pre-image.
pub fn generate_affine_mapped(
    metric: &SpdTensor3,
    target_n: usize,
    lo: Vec3,
    hi: Vec3,
) -> Result<TetMesh> {
    let m = metric.matrix();
    let scale = metric.spectral_norm();
    let off = m[(0, 1)].abs().max(m[(0, 2)].abs()).max(m[(1, 2)].abs());
    if off > 1e-12 * scale {
        return Err(Error::UnsupportedGeometry(
            "affine-mapped generation needs a diagonal metric on a box domain".into(),
        ));
    }
    let s = Vec3::new(m[(0, 0)].sqrt(), m[(1, 1)].sqrt(), m[(2, 2)].sqrt());
    let pre = Vec3::new(
        (hi.x - lo.x) * s.x,
        (hi.y - lo.y) * s.y,
        (hi.z - lo.z) * s.z,
    );
    let cells = (target_n as f64 / 6.0).max(1.0);
    let h = (pre.x * pre.y * pre.z / cells).cbrt();
    let n_of = |len: f64| ((len / h).round() as usize).max(1);
    Ok(uniform_box_mesh(
        n_of(pre.x),
        n_of(pre.y),
        n_of(pre.z),
        lo,
        hi,
        false,
    ))
}

#[derive(PartialEq)]
struct HeapEdge {
    len: f64,
    a: usize,
    b: usize,
}

impl Eq for HeapEdge {}

impl Ord for HeapEdge {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len
            .total_cmp(&other.len)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for HeapEdge {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct Refiner {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    tet_tags: Vec<i32>,
    metrics: Vec<SpdTensor3>,
    tet_alive: Vec<bool>,
    facets: Vec<[usize; 3]>,
    facet_tags: Vec<i32>,
    facet_alive: Vec<bool>,
    v2t: Vec<Vec<usize>>,
    v2f: Vec<Vec<usize>>,
    n_alive: usize,
}

impl Refiner {
    fn new(mesh: &TetMesh, metric: &MetricField) -> Self {
        let mut v2t = vec![Vec::new(); mesh.n_vertices()];
        for (e, t) in mesh.tets().iter().enumerate() {
            for &v in t {
                v2t[v].push(e);
            }
        }
        let mut v2f = vec![Vec::new(); mesh.n_vertices()];
        for (i, f) in mesh.facets().iter().enumerate() {
            for &v in f {
                v2f[v].push(i);
            }
        }
        Self {
            vertices: mesh.vertices().to_vec(),
            tets: mesh.tets().to_vec(),
            tet_tags: mesh.tet_tags().to_vec(),
            metrics: metric.tensors.clone(),
            tet_alive: vec![true; mesh.n_elements()],
            facets: mesh.facets().to_vec(),
            facet_tags: mesh.facet_tags().to_vec(),
            facet_alive: vec![true; mesh.n_facets()],
            v2t,
            v2f,
            n_alive: mesh.n_elements(),
        }
    }

    fn alive_tets_at(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.v2t[v].iter().copied().filter(|&e| self.tet_alive[e])
    }

    /// Metric length of an edge under the mean of the tensors of all elements
    /// adjacent to either endpoint.
    fn edge_length(&self, a: usize, b: usize) -> f64 {
        let mut sum = crate::geometry::SymTensor3::zero();
        let mut count = 0usize;
        let mut seen_b: Vec<usize> = Vec::new();
        for e in self.alive_tets_at(a) {
            sum = sum.add(self.metrics[e].sym());
            count += 1;
            seen_b.push(e);
        }
        for e in self.alive_tets_at(b) {
            if !seen_b.contains(&e) {
                sum = sum.add(self.metrics[e].sym());
                count += 1;
            }
        }
        if count == 0 {
            return 0.0;
        }
        let mean = sum.scale(1.0 / count as f64);
        let d = self.vertices[a] - self.vertices[b];
        mean.quadratic_form(&d).max(0.0).sqrt()
    }

    fn edges_at(&self, v: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for e in self.alive_tets_at(v) {
            let t = self.tets[e];
            for i in 0..4 {
                for j in (i + 1)..4 {
                    out.push((t[i].min(t[j]), t[i].max(t[j])));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn all_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (e, t) in self.tets.iter().enumerate() {
            if !self.tet_alive[e] {
                continue;
            }
            for i in 0..4 {
                for j in (i + 1)..4 {
                    out.push((t[i].min(t[j]), t[i].max(t[j])));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Split edge (a, b) at its midpoint: every live tetrahedron and boundary
    /// facet containing the edge is divided in two. Conformity is automatic
    /// because the whole edge star is split at once.
    fn split_edge(&mut self, a: usize, b: usize) -> Vec<usize> {
        let mid = self.vertices.len();
        self.vertices.push((self.vertices[a] + self.vertices[b]) * 0.5);
        self.v2t.push(Vec::new());
        self.v2f.push(Vec::new());
        let star: Vec<usize> = self
            .alive_tets_at(a)
            .filter(|&e| self.tets[e].contains(&b))
            .collect();
        let mut touched: Vec<usize> = Vec::with_capacity(star.len() * 4);
        for &e in &star {
            let t = self.tets[e];
            touched.extend_from_slice(&t);
            self.tet_alive[e] = false;
            self.n_alive -= 1;
            for half in 0..2 {
                let mut child = t;
                let replace = if half == 0 { b } else { a };
                for v in child.iter_mut() {
                    if *v == replace {
                        *v = mid;
                    }
                }
                let id = self.tets.len();
                self.tets.push(child);
                self.tet_tags.push(self.tet_tags[e]);
                self.metrics.push(self.metrics[e]);
                self.tet_alive.push(true);
                self.n_alive += 1;
                for &v in &child {
                    self.v2t[v].push(id);
                }
            }
        }
        // boundary facets containing the split edge
        let facet_star: Vec<usize> = self.v2f[a]
            .iter()
            .copied()
            .filter(|&f| self.facet_alive[f] && self.facets[f].contains(&b))
            .collect();
        for f in facet_star {
            let tri = self.facets[f];
            self.facet_alive[f] = false;
            for half in 0..2 {
                let mut child = tri;
                let replace = if half == 0 { b } else { a };
                for v in child.iter_mut() {
                    if *v == replace {
                        *v = mid;
                    }
                }
                let id = self.facets.len();
                self.facets.push(child);
                self.facet_tags.push(self.facet_tags[f]);
                self.facet_alive.push(true);
                for &v in &child {
                    self.v2f[v].push(id);
                }
            }
        }
        touched.push(mid);
        touched.sort_unstable();
        touched.dedup();
        touched
    }

    fn into_mesh(self) -> Result<TetMesh> {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut tets = Vec::new();
        let mut tet_tags = Vec::new();
        for (e, t) in self.tets.iter().enumerate() {
            if !self.tet_alive[e] {
                continue;
            }
            let mut mapped = [0usize; 4];
            for (k, &v) in t.iter().enumerate() {
                if remap[v] == usize::MAX {
                    remap[v] = vertices.len();
                    vertices.push(self.vertices[v]);
                }
                mapped[k] = remap[v];
            }
            tets.push(mapped);
            tet_tags.push(self.tet_tags[e]);
        }
        let mut facets = Vec::new();
        let mut facet_tags = Vec::new();
        for (f, tri) in self.facets.iter().enumerate() {
            if !self.facet_alive[f] {
                continue;
            }
            facets.push([remap[tri[0]], remap[tri[1]], remap[tri[2]]]);
            facet_tags.push(self.facet_tags[f]);
        }
        TetMesh::new(vertices, tets, tet_tags, facets, facet_tags)
    }
}

/// Refine toward an equidistributed mesh by repeatedly bisecting the edge of
/// largest metric length until the element budget is met or all metric edge
/// lengths fall within twice the median.
pub fn generate_bisection(
    mesh: &TetMesh,
    metric: &MetricField,
    target_n: usize,
) -> Result<TetMesh> {
    assert_eq!(metric.tensors.len(), mesh.n_elements());
    let mut r = Refiner::new(mesh, metric);
    let mut lengths: HashMap<(usize, usize), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    for (a, b) in r.all_edges() {
        let len = r.edge_length(a, b);
        lengths.insert((a, b), len);
        heap.push(HeapEdge { len, a, b });
    }
    // stop on the element budget, or between sweeps once every metric edge
    // length sits within twice the median (nothing left to equidistribute)
    let within_spread = |lengths: &HashMap<(usize, usize), f64>| -> bool {
        let mut v: Vec<f64> = lengths.values().copied().collect();
        if v.is_empty() {
            return true;
        }
        v.sort_unstable_by(f64::total_cmp);
        let median = v[v.len() / 2];
        *v.last().unwrap() <= 2.0 * median
    };
    if r.n_alive >= target_n {
        return r.into_mesh();
    }
    let check_every = (target_n / 8).max(512);
    let mut splits = 0usize;
    while r.n_alive < target_n {
        let Some(HeapEdge { len, a, b }) = heap.pop() else {
            break;
        };
        match lengths.get(&(a, b)) {
            Some(&cur) if cur == len => {}
            _ => continue, // stale entry
        }
        lengths.remove(&(a, b));
        let touched = r.split_edge(a, b);
        if r.n_alive > 10 * target_n {
            return Err(Error::RefinementStall {
                n: r.n_alive,
                target: target_n,
            });
        }
        let mut affected: Vec<(usize, usize)> = Vec::new();
        for &v in &touched {
            affected.extend(r.edges_at(v));
        }
        affected.sort_unstable();
        affected.dedup();
        for (ea, eb) in affected {
            let l = r.edge_length(ea, eb);
            let entry = lengths.insert((ea, eb), l);
            if entry != Some(l) {
                heap.push(HeapEdge { len: l, a: ea, b: eb });
            }
        }
        splits += 1;
        if splits % check_every == 0 && within_spread(&lengths) {
            break;
        }
    }
    r.into_mesh()
}

/// Hand the mesh and vertex metric to an external remesher and read back the
/// result. The command template is run through `sh -c` after substituting
/// `{in_mesh}`, `{in_sol}` and `{out_mesh}`.
pub fn external_mesher_roundtrip(
    mesh: &TetMesh,
    metric: &MetricField,
    command: &str,
) -> Result<TetMesh> {
    let dir = std::env::temp_dir().join(format!(
        "anisofem-mesher-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&dir)?;
    let in_mesh = dir.join("in.mesh");
    let in_sol = dir.join("in.sol");
    let out_mesh = dir.join("out.mesh");
    io::write_medit(mesh, &in_mesh)?;
    let vm = vertex_metric(mesh, metric);
    io::write_sol(io::SolLocation::Vertex, &io::SolData::Tensor(vm), &in_sol)?;
    let cmd = command
        .replace("{in_mesh}", &in_mesh.display().to_string())
        .replace("{in_sol}", &in_sol.display().to_string())
        .replace("{out_mesh}", &out_mesh.display().to_string());
    let output = std::process::Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()?;
    if !output.status.success() {
        return Err(Error::ExternalFailure {
            status: output.status.code(),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }
    if !out_mesh.exists() {
        return Err(Error::MissingOutput(out_mesh.display().to_string()));
    }
    let result = io::read_medit(&out_mesh).map_err(|e| Error::ExternalFailure {
        status: output.status.code(),
        stderr: format!("output mesh rejected: {e}"),
    });
    let _ = std::fs::remove_dir_all(&dir);
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uniform_cube_mesh;
    use crate::metric::metric_identity;
    use approx::assert_relative_eq;

    #[test]
    fn affine_mapped_identity_is_uniform_cube() {
        let m = generate_affine_mapped(
            &SpdTensor3::identity(),
            384,
            Vec3::zeros(),
            Vec3::repeat(1.0),
        )
        .unwrap();
        let reference = uniform_cube_mesh(4, Vec3::zeros(), Vec3::repeat(1.0));
        assert_eq!(m.n_elements(), reference.n_elements());
        assert_eq!(m.tets(), reference.tets());
        for (a, b) in m.vertices().iter().zip(reference.vertices()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn affine_mapped_axis_ratios_follow_metric() {
        // M = D⁻¹ with D = diag(100, 10, 1): cell extents scale like sqrt(k)
        let d = SpdTensor3::diagonal(100.0, 10.0, 1.0).unwrap();
        let m = generate_affine_mapped(&d.inverse(), 6000, Vec3::zeros(), Vec3::repeat(1.0))
            .unwrap();
        // count distinct coordinate levels per axis: cells per axis ∝ 1/sqrt(k)
        let mut levels = [std::collections::BTreeSet::new(), Default::default(), Default::default()];
        for v in m.vertices() {
            for d in 0..3 {
                levels[d].insert((v[d] * 1e9).round() as i64);
            }
        }
        let nx = levels[0].len() - 1;
        let ny = levels[1].len() - 1;
        let nz = levels[2].len() - 1;
        let rx = nz as f64 / nx as f64;
        let ry = nz as f64 / ny as f64;
        assert!((rx - 10.0).abs() <= 2.0, "x ratio {rx}");
        assert!((ry - 10f64.sqrt()).abs() <= 1.0, "y ratio {ry}");
    }

    #[test]
    fn affine_mapped_rejects_nondiagonal() {
        let spec = crate::problems::AngleDiffusionSpec {
            phi: 0.5,
            theta: 0.8,
            k1: 10.0,
            k2: 2.0,
            k3: 1.0,
        };
        let d = crate::problems::diffusion_from_angles(&spec);
        assert!(matches!(
            generate_affine_mapped(&d, 100, Vec3::zeros(), Vec3::repeat(1.0)),
            Err(Error::UnsupportedGeometry(_))
        ));
    }

    #[test]
    fn bisection_noop_at_target() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let out = generate_bisection(&mesh, &metric, mesh.n_elements()).unwrap();
        assert_eq!(out.n_elements(), mesh.n_elements());
    }

    #[test]
    fn bisection_preserves_volume_and_conformity() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let target = 8 * mesh.n_elements();
        let out = generate_bisection(&mesh, &metric, target).unwrap();
        assert!(out.n_elements() >= target);
        assert_relative_eq!(out.total_volume(), 1.0, max_relative = 1e-10);
        // TetMesh::new in into_mesh already validated facets; check tags kept
        assert!(out.facet_tags().iter().all(|&t| (1..=6).contains(&t)));
    }

    #[test]
    fn bisection_concentrates_where_metric_is_large() {
        let mesh = uniform_cube_mesh(3, Vec3::zeros(), Vec3::repeat(1.0));
        // strong metric in the x < 0.5 half
        let tensors: Vec<SpdTensor3> = (0..mesh.n_elements())
            .map(|e| {
                if mesh.barycenter(e).x < 0.5 {
                    SpdTensor3::diagonal(400.0, 400.0, 400.0).unwrap()
                } else {
                    SpdTensor3::identity()
                }
            })
            .collect();
        let metric = MetricField {
            tensors,
            alpha_h: None,
            fallback: false,
        };
        let out = generate_bisection(&mesh, &metric, 4 * mesh.n_elements()).unwrap();
        let left = (0..out.n_elements())
            .filter(|&e| out.barycenter(e).x < 0.5)
            .count();
        assert!(
            left as f64 >= 0.7 * out.n_elements() as f64,
            "left fraction {}",
            left as f64 / out.n_elements() as f64
        );
    }

    #[test]
    fn identity_remesher_roundtrip() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let out =
            external_mesher_roundtrip(&mesh, &metric, "cp {in_mesh} {out_mesh}").unwrap();
        assert_eq!(out.n_elements(), mesh.n_elements());
        assert_eq!(out.n_vertices(), mesh.n_vertices());
    }

    #[test]
    fn failing_remesher_surfaces_stderr() {
        let mesh = uniform_cube_mesh(1, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let err = external_mesher_roundtrip(&mesh, &metric, "echo boom >&2; false").unwrap_err();
        match err {
            Error::ExternalFailure { stderr, .. } => assert!(stderr.contains("boom")),
            other => panic!("expected ExternalFailure, got {other:?}"),
        }
    }

    #[test]
    fn remesher_without_output_is_detected() {
        let mesh = uniform_cube_mesh(1, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let err = external_mesher_roundtrip(&mesh, &metric, "true").unwrap_err();
        assert!(matches!(err, Error::MissingOutput(_)));
    }

    #[test]
    fn malformed_remesher_output_is_external_failure() {
        let mesh = uniform_cube_mesh(1, Vec3::zeros(), Vec3::repeat(1.0));
        let metric = metric_identity(&mesh);
        let err = external_mesher_roundtrip(&mesh, &metric, "echo garbage > {out_mesh}")
            .unwrap_err();
        assert!(matches!(err, Error::ExternalFailure { .. }));
    }

    #[test]
    fn identity_metric_affine_loop_is_fixed_point() {
        let mesh = uniform_cube_mesh(2, Vec3::zeros(), Vec3::repeat(1.0));
        let problem = crate::problems::patch_problem();
        let config = AdaptConfig {
            metric_kind: MetricKind::Identity,
            iterations: 3,
            target_n: mesh.n_elements(),
            backend: Backend::AffineMapped,
        };
        let result = adapt_loop(&problem, &mesh, &config).unwrap();
        assert_eq!(result.history.len(), 4);
        for rec in &result.history {
            assert_eq!(rec.n_elements, mesh.n_elements());
            assert!(!rec.mp_violated);
        }
    }
}
