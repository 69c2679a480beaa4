//! The experiment definitions: angle-parametrized diffusion, the Gaussian
//! ring benchmark, the cube-with-hole cases and the fractured reservoir
//! model, plus the key-value run configuration format.

use crate::error::{Error, Result};
use crate::fem::Problem;
use crate::geometry::{Mat3, SpdTensor3, SymTensor3, Vec3};
use crate::mesh::TetMesh;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Diffusion matrix given by its eigenvalues and the orientation of the
/// dominant eigenvector: `phi` is the angle to the positive z-axis, `theta`
/// the angle of the xy-projection to the positive x-axis.
#[derive(Clone, Copy, Debug)]
pub struct AngleDiffusionSpec {
    pub phi: f64,
    pub theta: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// Rotation whose first column is the dominant diffusion direction
/// `(sinφ cosθ, sinφ sinθ, cosφ)`.
pub fn rotation_from_angles(phi: f64, theta: f64) -> Mat3 {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Mat3::new(sp * ct, -st, cp * ct, sp * st, ct, cp * st, cp, 0.0, -sp)
}

pub fn diffusion_from_angles(spec: &AngleDiffusionSpec) -> SpdTensor3 {
    assert!(spec.k1 > 0.0 && spec.k2 > 0.0 && spec.k3 > 0.0);
    let r = rotation_from_angles(spec.phi, spec.theta);
    let d = Mat3::from_diagonal(&Vec3::new(spec.k1, spec.k2, spec.k3));
    SpdTensor3::new_unchecked(SymTensor3::from_matrix(&(r * d * r.transpose())))
}

fn all_faces_dirichlet(g: impl Fn(&Vec3) -> f64 + Send + Sync + Clone + 'static) -> BTreeMap<i32, crate::fem::ScalarFn> {
    let mut m: BTreeMap<i32, crate::fem::ScalarFn> = BTreeMap::new();
    for tag in 1..=6 {
        let g = g.clone();
        m.insert(tag, Box::new(move |x: &Vec3| g(x)));
    }
    m
}

/// Linear patch test: constant anisotropic diffusion, zero source,
/// `g = 1 + 2x − y + 3z`. The discrete solution must reproduce `g` exactly.
pub fn patch_problem() -> Problem {
    let spec = AngleDiffusionSpec {
        phi: 0.7,
        theta: 1.9,
        k1: 25.0,
        k2: 4.0,
        k3: 1.0,
    };
    let d = diffusion_from_angles(&spec);
    let g = |x: &Vec3| 1.0 + 2.0 * x.x - x.y + 3.0 * x.z;
    Problem {
        diffusion: Box::new(move |_| *d.sym()),
        source: Box::new(|_| 0.0),
        dirichlet: all_faces_dirichlet(g),
        neumann_zero: BTreeSet::new(),
        exact: Some(Box::new(g)),
    }
}

pub fn example1_spec() -> AngleDiffusionSpec {
    AngleDiffusionSpec {
        phi: -std::f64::consts::FRAC_PI_4,
        theta: 5.0 * std::f64::consts::PI / 6.0,
        k1: 100.0,
        k2: 10.0,
        k3: 1.0,
    }
}

pub fn example1_exact(x: &Vec3) -> f64 {
    let dx = x.x - 0.5;
    let dy = x.y - 0.5;
    (-100.0 * (dx * dx + dy * dy - 0.01)).exp() + x.z * x.z
}

/// Gaussian-ring benchmark on the unit cube: the source and boundary data are
/// derived from the closed-form solution `exp(-100((x-1/2)² + (y-1/2)² -
/// 0.1²)) + z²` under the Example-1 diffusion matrix.
pub fn example1_problem() -> Problem {
    let d = diffusion_from_angles(&example1_spec());
    let dm = *d.matrix();
    let source = move |x: &Vec3| {
        let dx = x.x - 0.5;
        let dy = x.y - 0.5;
        let e = (-100.0 * (dx * dx + dy * dy - 0.01)).exp();
        let uxx = (-200.0 + 40_000.0 * dx * dx) * e;
        let uyy = (-200.0 + 40_000.0 * dy * dy) * e;
        let uxy = 40_000.0 * dx * dy * e;
        let uzz = 2.0;
        -(dm[(0, 0)] * uxx + 2.0 * dm[(0, 1)] * uxy + dm[(1, 1)] * uyy + dm[(2, 2)] * uzz)
    };
    Problem {
        diffusion: Box::new(move |_| *d.sym()),
        source: Box::new(source),
        dirichlet: all_faces_dirichlet(example1_exact),
        neumann_zero: BTreeSet::new(),
        exact: Some(Box::new(example1_exact)),
    }
}

pub fn example2_spec(case: u8) -> AngleDiffusionSpec {
    let pi = std::f64::consts::PI;
    match case {
        1 => AngleDiffusionSpec {
            phi: pi / 4.0,
            theta: pi / 4.0,
            k1: 100.0,
            k2: 10.0,
            k3: 10.0,
        },
        2 => AngleDiffusionSpec {
            phi: pi / 4.0,
            theta: 3.0 * pi / 4.0,
            k1: 100.0,
            k2: 10.0,
            k3: 10.0,
        },
        3 => AngleDiffusionSpec {
            phi: pi / 4.0,
            theta: pi / 4.0,
            k1: 1000.0,
            k2: 1.0,
            k3: 1.0,
        },
        _ => panic!("example 2 has cases 1-3"),
    }
}

/// Cube-with-hole problem: zero source, `u = 0` on the outer surface (tag 1)
/// and `u = 4` on the hole surface (tag 2). The exact solution satisfies
/// `0 ≤ u ≤ 4`.
pub fn example2_problem(case: u8) -> Problem {
    let d = diffusion_from_angles(&example2_spec(case));
    let mut dirichlet: BTreeMap<i32, crate::fem::ScalarFn> = BTreeMap::new();
    dirichlet.insert(1, Box::new(|_: &Vec3| 0.0));
    dirichlet.insert(2, Box::new(|_: &Vec3| 4.0));
    Problem {
        diffusion: Box::new(move |_| *d.sym()),
        source: Box::new(|_| 0.0),
        dirichlet,
        neumann_zero: BTreeSet::new(),
        exact: None,
    }
}

/// A vertical fracture slab at 45 degrees to the x-axis, reaching from the
/// front face `y = 0` into the panel.
#[derive(Clone, Copy, Debug)]
pub struct FractureSlab {
    pub center_x: f64,
    pub half_length: f64,
}

/// Fractured reservoir panel. Lengths in feet, permeabilities in
/// millidarcies, pressures in psi. The fracture permeability along the
/// fracture is `conductivity / width`, so rescaling the width preserves the
/// conductivity exactly.
#[derive(Clone, Debug)]
pub struct ReservoirSpec {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub fractures: Vec<FractureSlab>,
    pub width: f64,
    pub conductivity: f64,
    pub k_mpar: f64,
    pub k_mperp: f64,
    pub p_r: f64,
    pub p_w: f64,
}

impl ReservoirSpec {
    /// The half-panel of the full model: three fractures, width scaled up to
    /// 10 ft at 100 mD·ft conductivity.
    pub fn full() -> Self {
        Self {
            lx: 3000.0,
            ly: 500.0,
            lz: 300.0,
            fractures: vec![
                FractureSlab { center_x: 800.0, half_length: 400.0 },
                FractureSlab { center_x: 1500.0, half_length: 400.0 },
                FractureSlab { center_x: 2200.0, half_length: 400.0 },
            ],
            width: 10.0,
            conductivity: 100.0,
            k_mpar: 0.1,
            k_mperp: 5.0,
            p_r: 3800.0,
            p_w: 1000.0,
        }
    }

    /// Desk-scale variant: panel shrunk to 1/10 linear size with a single
    /// fracture. The fracture width is kept at 10 ft (already the scaled-up
    /// width), so the conductivity and the permeability matrices are
    /// unchanged.
    pub fn desk() -> Self {
        Self {
            lx: 300.0,
            ly: 100.0,
            lz: 30.0,
            fractures: vec![FractureSlab { center_x: 150.0, half_length: 40.0 }],
            width: 10.0,
            conductivity: 100.0,
            k_mpar: 0.1,
            k_mperp: 5.0,
            p_r: 3800.0,
            p_w: 1000.0,
        }
    }

    pub fn k_pf(&self) -> f64 {
        self.conductivity / self.width
    }

    /// Rescale the fracture width, keeping `K_pf · W_f` invariant.
    pub fn with_width(mut self, width: f64) -> Self {
        assert!(width > 0.0);
        self.width = width;
        self
    }

    fn rot45() -> Mat3 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Mat3::new(s, -s, 0.0, s, s, 0.0, 0.0, 0.0, 1.0)
    }

    /// Permeability inside the fractures: `k_pf` along the fracture,
    /// `k_mperp` across it, `k_mpar` vertically.
    pub fn fracture_tensor(&self) -> SpdTensor3 {
        let r = Self::rot45();
        let d = Mat3::from_diagonal(&Vec3::new(self.k_pf(), self.k_mperp, self.k_mpar));
        SpdTensor3::new_unchecked(SymTensor3::from_matrix(&(r * d * r.transpose())))
    }

    /// Permeability in the matrix: `k_mpar` along the fracture direction and
    /// vertically, `k_mperp` across.
    pub fn matrix_tensor(&self) -> SpdTensor3 {
        let r = Self::rot45();
        let d = Mat3::from_diagonal(&Vec3::new(self.k_mpar, self.k_mperp, self.k_mpar));
        SpdTensor3::new_unchecked(SymTensor3::from_matrix(&(r * d * r.transpose())))
    }

    /// Signed-distance style membership test for the fracture subdomain.
    pub fn in_fracture(&self, p: &Vec3) -> bool {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.fractures.iter().any(|f| {
            let along = (p.x - f.center_x + p.y) * s;
            let across = (p.x - f.center_x - p.y) * s;
            across.abs() <= 0.5 * self.width && (0.0..=f.half_length).contains(&along)
        })
    }

    /// True on the front face `y = 0` inside a fracture trace (the wellbore
    /// surface Γ4).
    pub fn on_wellbore_face(&self, p: &Vec3) -> bool {
        let half = 0.5 * self.width * 2.0_f64.sqrt();
        p.y.abs() < 1e-9 * self.ly
            && self.fractures.iter().any(|f| (p.x - f.center_x).abs() <= half + 1e-12 * self.lx)
    }

    /// Permeability field sampled pointwise.
    pub fn permeability(&self, p: &Vec3) -> SymTensor3 {
        if self.in_fracture(p) {
            *self.fracture_tensor().sym()
        } else {
            *self.matrix_tensor().sym()
        }
    }
}

/// Boundary tags used by the reservoir problem.
pub mod reservoir_tags {
    /// Far field: `x = 0`, `x = lx`, `y = ly`. Dirichlet `P_r`.
    pub const FAR_FIELD: i32 = 1;
    /// Front face outside the fracture traces. Zero flux.
    pub const FRONT: i32 = 2;
    /// Bottom and top. Zero flux.
    pub const TOP_BOTTOM: i32 = 3;
    /// Fracture traces on the front face. Dirichlet `P_w`.
    pub const WELLBORE: i32 = 4;
}

/// Retag a reservoir panel mesh's boundary facets by position.
pub fn tag_reservoir_boundary(mesh: &mut TetMesh, spec: &ReservoirSpec) {
    let (lx, ly, lz) = (spec.lx, spec.ly, spec.lz);
    let eps = 1e-9 * mesh.bbox_diagonal();
    let spec = spec.clone();
    mesh.retag_facets(move |p| {
        let c = (p[0] + p[1] + p[2]) / 3.0;
        if c.x.abs() < eps || (c.x - lx).abs() < eps || (c.y - ly).abs() < eps {
            reservoir_tags::FAR_FIELD
        } else if c.z.abs() < eps || (c.z - lz).abs() < eps {
            reservoir_tags::TOP_BOTTOM
        } else if spec.on_wellbore_face(&c) {
            reservoir_tags::WELLBORE
        } else {
            reservoir_tags::FRONT
        }
    });
}

/// Steady single-phase Darcy pressure problem on the reservoir panel.
pub fn reservoir_problem(spec: &ReservoirSpec) -> Problem {
    let perm = spec.clone();
    let p_r = spec.p_r;
    let p_w = spec.p_w;
    let mut dirichlet: BTreeMap<i32, crate::fem::ScalarFn> = BTreeMap::new();
    dirichlet.insert(reservoir_tags::FAR_FIELD, Box::new(move |_: &Vec3| p_r));
    dirichlet.insert(reservoir_tags::WELLBORE, Box::new(move |_: &Vec3| p_w));
    let mut neumann = BTreeSet::new();
    neumann.insert(reservoir_tags::FRONT);
    neumann.insert(reservoir_tags::TOP_BOTTOM);
    Problem {
        diffusion: Box::new(move |x| perm.permeability(x)),
        source: Box::new(|_| 0.0),
        dirichlet,
        neumann_zero: neumann,
        exact: None,
    }
}

/// How a run obtains its mesh.
#[derive(Clone, Debug, PartialEq)]
pub enum MeshSpec {
    /// Path of a MEDIT file.
    File(String),
    /// `cube:n` uniform unit cube.
    Cube(usize),
    /// `hole:n` unit cube with the `[0.4,0.6]³` hole.
    Hole(usize),
    /// `box:nx,ny,nz[,mirror]` over the problem's natural domain.
    Box { nx: usize, ny: usize, nz: usize, mirror: bool },
}

impl MeshSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("cube:") {
            let n = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad cube subdivision '{rest}'")))?;
            return Ok(MeshSpec::Cube(n));
        }
        if let Some(rest) = s.strip_prefix("hole:") {
            let n = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad hole subdivision '{rest}'")))?;
            return Ok(MeshSpec::Hole(n));
        }
        if let Some(rest) = s.strip_prefix("box:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() < 3 {
                return Err(Error::Config(format!("bad box spec '{rest}'")));
            }
            let parse = |p: &str| -> Result<usize> {
                p.parse()
                    .map_err(|_| Error::Config(format!("bad box subdivision '{p}'")))
            };
            return Ok(MeshSpec::Box {
                nx: parse(parts[0])?,
                ny: parse(parts[1])?,
                nz: parse(parts[2])?,
                mirror: parts.get(3) == Some(&"mirror"),
            });
        }
        Ok(MeshSpec::File(s.to_string()))
    }
}

/// Which experiment a configuration selects.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemKind {
    Example1,
    Example2 { case: u8 },
    Reservoir { desk: bool },
    Patch,
}

/// Parsed key-value run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub mesh: Option<MeshSpec>,
    /// Optional diffusion override used by audits: `angles φ θ k1 k2 k3`,
    /// `matrix a11 a21 a22 a31 a32 a33`, or `identity`.
    pub diffusion: Option<SpdTensor3>,
}

impl RunConfig {
    pub fn parse_str(text: &str, path: &str) -> Result<Self> {
        let mut problem: Option<String> = None;
        let mut case: Option<u8> = None;
        let mut desk = true;
        let mut mesh = None;
        let mut diffusion = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.into(),
                line: ln + 1,
                msg: "expected 'key = value'".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| Error::Parse {
                path: path.into(),
                line: ln + 1,
                msg,
            };
            match key {
                "problem" => problem = Some(value.to_string()),
                "case" => {
                    case = Some(value.parse().map_err(|_| bad(format!("bad case '{value}'")))?)
                }
                "desk_scale" => {
                    desk = value
                        .parse()
                        .map_err(|_| bad(format!("bad desk_scale '{value}'")))?
                }
                "mesh" => mesh = Some(MeshSpec::parse(value)?),
                "diffusion" => {
                    diffusion = Some(match parse_diffusion(value) {
                        Ok(d) => d,
                        Err(e @ Error::NotSpd(_)) => return Err(e),
                        Err(e) => return Err(bad(e.to_string())),
                    })
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let problem = match problem.as_deref() {
            Some("example1") => ProblemKind::Example1,
            Some("example2") => ProblemKind::Example2 {
                case: case.unwrap_or(1),
            },
            Some("reservoir") => ProblemKind::Reservoir { desk },
            Some("patch") | None => ProblemKind::Patch,
            Some(other) => {
                return Err(Error::Config(format!("unknown problem '{other}'")));
            }
        };
        if let ProblemKind::Example2 { case } = problem {
            if !(1..=3).contains(&case) {
                return Err(Error::Config(format!("example 2 case {case} out of range")));
            }
        }
        Ok(Self {
            problem,
            mesh,
            diffusion,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn build_problem(&self) -> Problem {
        match &self.problem {
            ProblemKind::Example1 => example1_problem(),
            ProblemKind::Example2 { case } => example2_problem(*case),
            ProblemKind::Reservoir { desk } => {
                let spec = if *desk {
                    ReservoirSpec::desk()
                } else {
                    ReservoirSpec::full()
                };
                reservoir_problem(&spec)
            }
            ProblemKind::Patch => patch_problem(),
        }
    }

    pub fn reservoir_spec(&self) -> Option<ReservoirSpec> {
        match self.problem {
            ProblemKind::Reservoir { desk } => Some(if desk {
                ReservoirSpec::desk()
            } else {
                ReservoirSpec::full()
            }),
            _ => None,
        }
    }

    /// Natural domain box of the selected problem.
    pub fn domain(&self) -> (Vec3, Vec3) {
        match &self.problem {
            ProblemKind::Reservoir { .. } => {
                let s = self.reservoir_spec().unwrap();
                (Vec3::zeros(), Vec3::new(s.lx, s.ly, s.lz))
            }
            _ => (Vec3::zeros(), Vec3::repeat(1.0)),
        }
    }

    /// Build the mesh this configuration asks for.
    pub fn build_mesh(&self) -> Result<TetMesh> {
        let spec = self
            .mesh
            .as_ref()
            .ok_or_else(|| Error::Config("no mesh specified (config 'mesh' key or --mesh)".into()))?;
        self.build_mesh_from(spec)
    }

    pub fn build_mesh_from(&self, spec: &MeshSpec) -> Result<TetMesh> {
        let (lo, hi) = self.domain();
        let mut mesh = match spec {
            MeshSpec::File(path) => crate::io::read_medit(path)?,
            MeshSpec::Cube(n) => crate::mesh::uniform_cube_mesh(*n, lo, hi),
            MeshSpec::Hole(n) => {
                crate::mesh::cube_with_hole_mesh(*n, Vec3::repeat(0.4), Vec3::repeat(0.6))?
            }
            MeshSpec::Box { nx, ny, nz, mirror } => {
                crate::mesh::uniform_box_mesh(*nx, *ny, *nz, lo, hi, *mirror)
            }
        };
        if let Some(rspec) = self.reservoir_spec() {
            tag_reservoir_boundary(&mut mesh, &rspec);
        }
        Ok(mesh)
    }
}

fn parse_diffusion(value: &str) -> Result<SpdTensor3> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let nums = |s: &[&str]| -> Result<Vec<f64>> {
        s.iter()
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::Config(format!("bad number '{p}' in diffusion spec")))
            })
            .collect()
    };
    match parts.first() {
        Some(&"identity") => Ok(SpdTensor3::identity()),
        Some(&"angles") if parts.len() == 6 => {
            let v = nums(&parts[1..])?;
            if v[2] <= 0.0 || v[3] <= 0.0 || v[4] <= 0.0 {
                return Err(Error::NotSpd("diffusion eigenvalues must be positive".into()));
            }
            Ok(diffusion_from_angles(&AngleDiffusionSpec {
                phi: v[0],
                theta: v[1],
                k1: v[2],
                k2: v[3],
                k3: v[4],
            }))
        }
        Some(&"matrix") if parts.len() == 7 => {
            let v = nums(&parts[1..])?;
            SpdTensor3::from_lower([v[0], v[1], v[2], v[3], v[4], v[5]])
        }
        _ => Err(Error::Config(format!("bad diffusion spec '{value}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn isotropic_angles_give_scaled_identity() {
        let d = diffusion_from_angles(&AngleDiffusionSpec {
            phi: 0.37,
            theta: -2.1,
            k1: 5.0,
            k2: 5.0,
            k3: 5.0,
        });
        assert_relative_eq!(*d.matrix(), Mat3::identity() * 5.0, epsilon = 1e-12);
    }

    #[test]
    fn dominant_axis_along_x() {
        let d = diffusion_from_angles(&AngleDiffusionSpec {
            phi: std::f64::consts::FRAC_PI_2,
            theta: 0.0,
            k1: 100.0,
            k2: 10.0,
            k3: 1.0,
        });
        let expected = Mat3::from_diagonal(&Vec3::new(100.0, 10.0, 1.0));
        assert_relative_eq!(*d.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn example1_spec_roundtrips_through_eigensolver() {
        let spec = example1_spec();
        let d = diffusion_from_angles(&spec);
        let eig = d.eigenvalues();
        assert_relative_eq!(eig[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(eig[1], 10.0, max_relative = 1e-10);
        assert_relative_eq!(eig[2], 100.0, max_relative = 1e-10);
        // dominant eigenvector matches the stated direction up to sign
        let (_, vecs) = d.sym().eigen();
        let dir = Vec3::new(
            spec.phi.sin() * spec.theta.cos(),
            spec.phi.sin() * spec.theta.sin(),
            spec.phi.cos(),
        );
        assert_relative_eq!(vecs.column(2).dot(&dir).abs(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn example1_value_at_ring_center_plane() {
        let u = example1_exact(&Vec3::new(0.5, 0.5, 0.0));
        assert_relative_eq!(u, std::f64::consts::E, max_relative = 1e-12);
    }

    #[test]
    fn example1_range_stays_in_zero_to_one_plus_e() {
        let mesh = crate::mesh::uniform_cube_mesh(12, Vec3::zeros(), Vec3::repeat(1.0));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in mesh.vertices() {
            let u = example1_exact(p);
            lo = lo.min(u);
            hi = hi.max(u);
        }
        assert!(lo > 0.0);
        assert!(hi <= 1.0 + std::f64::consts::E + 1e-12);
    }

    #[test]
    fn example1_source_matches_finite_differences() {
        // central finite differences of -∇·(D ∇u) at random interior points
        let p = example1_problem();
        let d = diffusion_from_angles(&example1_spec());
        let dm = *d.matrix();
        let h = 1e-4;
        let mut state = 0x9e3779b9u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.1 + 0.8 * ((state >> 11) as f64 / (1u64 << 53) as f64)
        };
        for _ in 0..100 {
            let x = Vec3::new(next(), next(), next());
            let mut lap = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let mut ei = Vec3::zeros();
                    let mut ej = Vec3::zeros();
                    ei[i] = h;
                    ej[j] = h;
                    let dij = if i == j {
                        (example1_exact(&(x + ei)) - 2.0 * example1_exact(&x)
                            + example1_exact(&(x - ei)))
                            / (h * h)
                    } else {
                        (example1_exact(&(x + ei + ej)) - example1_exact(&(x + ei - ej))
                            - example1_exact(&(x - ei + ej))
                            + example1_exact(&(x - ei - ej)))
                            / (4.0 * h * h)
                    };
                    lap += dm[(i, j)] * dij;
                }
            }
            let f = (p.source)(&x);
            let scale = f.abs().max(1.0);
            assert!(
                (f + lap).abs() <= 2e-3 * scale,
                "source mismatch at {x:?}: f = {f:.6e}, -div = {:.6e}",
                -lap
            );
        }
    }

    #[test]
    fn example2_cases_differ_as_specified() {
        let s1 = example2_spec(1);
        let s2 = example2_spec(2);
        assert_eq!(s1.phi, s2.phi);
        assert_ne!(s1.theta, s2.theta);
        assert_eq!(s1.k1, s2.k1);
        let s3 = example2_spec(3);
        assert_relative_eq!(s3.k1 / s3.k3, 1000.0, epsilon = 0.0);
    }

    #[test]
    fn reservoir_tensors_match_displayed_matrices() {
        let spec = ReservoirSpec::full();
        let f = spec.fracture_tensor();
        let expected_f = Mat3::new(7.5, 2.5, 0.0, 2.5, 7.5, 0.0, 0.0, 0.0, 0.1);
        assert_relative_eq!(*f.matrix(), expected_f, epsilon = 1e-12);
        let m = spec.matrix_tensor();
        let expected_m = Mat3::new(2.55, -2.45, 0.0, -2.45, 2.55, 0.0, 0.0, 0.0, 0.1);
        assert_relative_eq!(*m.matrix(), expected_m, epsilon = 1e-12);
        // eigenvalues {10, 5, 0.1} and {5, 0.1, 0.1}
        let fe = f.eigenvalues();
        assert_relative_eq!(fe[2], 10.0, max_relative = 1e-12);
        assert_relative_eq!(fe[1], 5.0, max_relative = 1e-12);
        assert_relative_eq!(fe[0], 0.1, max_relative = 1e-12);
        let me = m.eigenvalues();
        assert_relative_eq!(me[2], 5.0, max_relative = 1e-12);
        assert_relative_eq!(me[0], 0.1, max_relative = 1e-12);
    }

    #[test]
    fn conductivity_preserved_under_width_scaling() {
        let spec = ReservoirSpec::full();
        let scaled = spec.clone().with_width(20.0);
        assert_relative_eq!(
            spec.k_pf() * spec.width,
            scaled.k_pf() * scaled.width,
            epsilon = 0.0
        );
        // dominant fracture eigenvalue halves when the width doubles
        assert_relative_eq!(scaled.fracture_tensor().eigenvalues()[2], 5.0, max_relative = 1e-12);
    }

    #[test]
    fn fracture_membership() {
        let spec = ReservoirSpec::full();
        assert!(spec.in_fracture(&Vec3::new(1500.0, 1.0, 100.0)));
        assert!(!spec.in_fracture(&Vec3::new(100.0, 100.0, 100.0)));
        // past the half-length along the slab
        let s = 2.0_f64.sqrt() / 2.0;
        let far = Vec3::new(1500.0 + 500.0 * s, 500.0 * s, 10.0);
        assert!(!spec.in_fracture(&far));
    }

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::parse_str(
            "problem = example2\ncase = 3\nmesh = hole:5\n",
            "test.cfg",
        )
        .unwrap();
        assert_eq!(cfg.problem, ProblemKind::Example2 { case: 3 });
        assert_eq!(cfg.mesh, Some(MeshSpec::Hole(5)));
        let bad = RunConfig::parse_str("problem example1\n", "test.cfg");
        assert!(bad.is_err());
        let nonspd = RunConfig::parse_str(
            "problem = patch\ndiffusion = matrix 1 0 -2 0 0 1\n",
            "t.cfg",
        );
        assert!(nonspd.is_err());
    }
}
