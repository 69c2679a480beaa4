//! Command implementations behind the `anisofem` binary: single solves,
//! adaptation runs, mesh quality audits and convergence studies.
//!
//! Every run writes a manifest and a machine-readable `report.kv` (one
//! `key=value` per line) next to any meshes and VTK files, and refuses to
//! reuse a non-empty output directory unless forced.

use crate::adapt::{adapt_loop, AdaptConfig, Backend};
use crate::error::{Error, Result};
use crate::fem::{assemble_and_solve, l2_error, mp_report};
use crate::io;
use crate::mesh::TetMesh;
use crate::metric::{metric_dmp, MetricKind};
use crate::problems::{MeshSpec, RunConfig};
use crate::quality;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub mesh: Option<String>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub threads: Option<usize>,
    pub seed: u64,
}

impl CommonArgs {
    fn init_threads(&self) {
        if let Some(k) = self.threads {
            // best effort; the pool may already exist in tests
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global();
        }
    }

    fn mesh_spec(&self, config: &RunConfig) -> Result<MeshSpec> {
        if let Some(s) = &self.mesh {
            return MeshSpec::parse(s);
        }
        config
            .mesh
            .clone()
            .ok_or_else(|| Error::Config("no mesh given (config 'mesh' key or --mesh)".into()))
    }

    fn load_mesh(&self, config: &RunConfig) -> Result<TetMesh> {
        let spec = self.mesh_spec(config)?;
        if let MeshSpec::File(path) = &spec {
            if !Path::new(path).exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("mesh file not found: {path}"),
                )));
            }
        }
        config.build_mesh_from(&spec)
    }
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)?.next().is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            )));
        }
    } else {
        fs::create_dir_all(out)?;
    }
    Ok(())
}

fn write_manifest(out: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        writeln!(text, "{k}={v}").unwrap();
    }
    fs::write(out.join("manifest.txt"), text)?;
    Ok(())
}

struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    fn new() -> Self {
        Self { lines: Vec::new() }
    }

    fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.lines.push((key.into(), value.into()));
    }

    fn print_and_write(&self, out: Option<&Path>) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.lines {
            writeln!(text, "{k}={v}").unwrap();
        }
        print!("{text}");
        if let Some(dir) = out {
            fs::write(dir.join("report.kv"), text)?;
        }
        Ok(())
    }
}

fn solution_report(
    report: &mut Report,
    prefix: &str,
    mesh: &TetMesh,
    sol: &crate::fem::FemSolution,
    l2: Option<f64>,
) {
    report.push(format!("{prefix}n_elements"), format!("{}", mesh.n_elements()));
    report.push(format!("{prefix}n_vertices"), format!("{}", mesh.n_vertices()));
    report.push(format!("{prefix}u_min"), format!("{:.6e}", sol.u_min));
    report.push(format!("{prefix}u_max"), format!("{:.6e}", sol.u_max));
    report.push(format!("{prefix}residual"), format!("{:.3e}", sol.residual));
    report.push(format!("{prefix}cg_iterations"), format!("{}", sol.iterations));
    let mp = mp_report(mesh, sol);
    report.push(format!("{prefix}mp_violated"), format!("{}", mp.violated));
    report.push(
        format!("{prefix}boundary_min"),
        format!("{:.6e}", mp.boundary_min),
    );
    if let Some(err) = l2 {
        report.push(format!("{prefix}l2_error"), format!("{err:.6e}"));
    }
}

/// Solve once on the given mesh and write solution + diagnostics.
pub fn cmd_solve(args: &CommonArgs) -> Result<()> {
    args.init_threads();
    let config = RunConfig::load(&args.config)?;
    let mesh = args.load_mesh(&config)?;
    let problem = config.build_problem();
    if let Some(out) = &args.out {
        prepare_out_dir(out, args.force)?;
        write_manifest(
            out,
            &[
                ("command", "solve".into()),
                ("config", args.config.display().to_string()),
                ("mesh", args.mesh.clone().unwrap_or_default()),
                ("out", out.display().to_string()),
                ("seed", args.seed.to_string()),
            ],
        )?;
    }
    let sol = assemble_and_solve(&mesh, &problem)?;
    let l2 = problem
        .exact
        .as_ref()
        .map(|e| l2_error(&mesh, &sol.u, &|x| e(x)));
    let mut report = Report::new();
    solution_report(&mut report, "", &mesh, &sol, l2);
    if let Some(out) = &args.out {
        io::write_vtk(&mesh, &[("u", &sol.u)], &[], out.join("solution.vtk"))?;
        io::write_medit(&mesh, out.join("mesh.mesh"))?;
    }
    report.print_and_write(args.out.as_deref())?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AdaptArgs {
    pub common: CommonArgs,
    pub metric: MetricKind,
    pub iterations: usize,
    pub target_n: Option<usize>,
    pub backend: String,
    pub mesher_cmd: Option<String>,
}

/// Run the adaptation loop, writing per-iteration meshes, metrics and the
/// quality history.
pub fn cmd_adapt(args: &AdaptArgs) -> Result<()> {
    args.common.init_threads();
    let config = RunConfig::load(&args.common.config)?;
    let mesh = args.common.load_mesh(&config)?;
    let problem = config.build_problem();
    let backend = match args.backend.as_str() {
        "affine" => Backend::AffineMapped,
        "bisect" => Backend::Bisection,
        "external" => Backend::External {
            command: args
                .mesher_cmd
                .clone()
                .ok_or_else(|| Error::Config("--backend external needs --mesher-cmd".into()))?,
        },
        other => return Err(Error::Config(format!("unknown backend '{other}'"))),
    };
    let adapt_config = AdaptConfig {
        metric_kind: args.metric,
        iterations: args.iterations,
        target_n: args.target_n.unwrap_or(mesh.n_elements()).max(6),
        backend,
    };
    if let Some(out) = &args.common.out {
        prepare_out_dir(out, args.common.force)?;
        write_manifest(
            out,
            &[
                ("command", "adapt".into()),
                ("config", args.common.config.display().to_string()),
                ("mesh", args.common.mesh.clone().unwrap_or_default()),
                ("metric", args.metric.name().into()),
                ("backend", args.backend.clone()),
                ("iterations", args.iterations.to_string()),
                ("target_n", adapt_config.target_n.to_string()),
                ("out", out.display().to_string()),
                ("seed", args.common.seed.to_string()),
            ],
        )?;
    }
    let result = adapt_loop(&problem, &mesh, &adapt_config)?;
    let mut report = Report::new();
    report.push("iterations", format!("{}", result.history.len()));
    for (i, rec) in result.history.iter().enumerate() {
        let p = format!("iter{i}_");
        report.push(format!("{p}n_elements"), format!("{}", rec.n_elements));
        report.push(format!("{p}u_min"), format!("{:.6e}", rec.u_min));
        report.push(format!("{p}u_max"), format!("{:.6e}", rec.u_max));
        report.push(format!("{p}mp_violated"), format!("{}", rec.mp_violated));
        report.push(format!("{p}qali_l2"), format!("{:.4}", rec.quality.norm_qali_l2));
        report.push(
            format!("{p}qali_linf"),
            format!("{:.4}", rec.quality.norm_qali_linf),
        );
        report.push(format!("{p}qeq_l2"), format!("{:.4}", rec.quality.norm_qeq_l2));
        if let Some(e) = rec.l2_error {
            report.push(format!("{p}l2_error"), format!("{e:.6e}"));
        }
        if let Some(a) = rec.alpha_h {
            report.push(format!("{p}alpha_h"), format!("{a:.6e}"));
        }
        if rec.metric_fallback {
            report.push(format!("{p}metric_fallback"), "true".to_string());
        }
    }
    let final_rec = result.history.last().unwrap();
    report.push("final_n_elements", format!("{}", final_rec.n_elements));
    report.push("final_u_min", format!("{:.6e}", final_rec.u_min));
    report.push("final_mp_violated", format!("{}", final_rec.mp_violated));
    if let Some(e) = final_rec.l2_error {
        report.push("final_l2_error", format!("{e:.6e}"));
    }
    if let Some(out) = &args.common.out {
        io::write_medit(&result.mesh, out.join("final.mesh"))?;
        io::write_sol(
            io::SolLocation::Element,
            &io::SolData::Tensor(result.metric.tensors.iter().map(|t| *t.sym()).collect()),
            out.join("final.sol"),
        )?;
        io::write_vtk(
            &result.mesh,
            &[("u", &result.solution.u)],
            &[("q_ali", &final_rec.quality.q_ali)],
            out.join("solution.vtk"),
        )?;
    }
    report.print_and_write(args.common.out.as_deref())?;
    Ok(())
}

/// Quality audit of a mesh against a diffusion field: the metric is taken as
/// the inverse diffusion matrix, so the alignment norm is directly comparable
/// with the maximum-principle bound.
pub fn cmd_audit(args: &CommonArgs) -> Result<()> {
    args.init_threads();
    let config = RunConfig::load(&args.config)?;
    let mesh = args.load_mesh(&config)?;
    let diffusion: Vec<_> = match &config.diffusion {
        Some(d) => vec![*d; mesh.n_elements()],
        None => config.build_problem().element_diffusion(&mesh)?,
    };
    let metric = metric_dmp(&mesh, &diffusion)?;
    let rep = quality::report(&mesh, &metric, &diffusion)?;
    if let Some(out) = &args.out {
        prepare_out_dir(out, args.force)?;
        write_manifest(
            out,
            &[
                ("command", "audit".into()),
                ("config", args.config.display().to_string()),
                ("mesh", args.mesh.clone().unwrap_or_default()),
                ("seed", args.seed.to_string()),
            ],
        )?;
        io::write_vtk(
            &mesh,
            &[],
            &[("q_ali", &rep.q_ali), ("q_eq", &rep.q_eq)],
            out.join("audit.vtk"),
        )?;
    }
    let mut report = Report::new();
    for (k, v) in rep.summary_lines() {
        report.push(k, v);
    }
    report.push("mp_bound_3d", format!("{:.9}", quality::mp_bound(3)));
    report.print_and_write(args.out.as_deref())?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ConvergenceArgs {
    pub common: CommonArgs,
    pub n_list: Vec<usize>,
}

/// Uniform-mesh convergence study over a list of subdivisions; reports the
/// fitted log-log slope of the error against the mesh size and the error
/// reduction factor per refinement step.
pub fn cmd_convergence(args: &ConvergenceArgs) -> Result<()> {
    args.common.init_threads();
    let config = RunConfig::load(&args.common.config)?;
    let problem = config.build_problem();
    if let Some(out) = &args.common.out {
        prepare_out_dir(out, args.common.force)?;
        write_manifest(
            out,
            &[
                ("command", "convergence".into()),
                ("config", args.common.config.display().to_string()),
                (
                    "n_list",
                    args.n_list
                        .iter()
                        .map(|n| n.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
                ("seed", args.common.seed.to_string()),
            ],
        )?;
    }
    let mut report = Report::new();
    let mut errors: Vec<(f64, f64)> = Vec::new(); // (h, error)
    let mut scale = 0.0f64;
    for &n in &args.n_list {
        let mesh = config.build_mesh_from(&MeshSpec::Cube(n))?;
        let sol = assemble_and_solve(&mesh, &problem)?;
        let l2 = problem
            .exact
            .as_ref()
            .map(|e| l2_error(&mesh, &sol.u, &|x| e(x)));
        let p = format!("n{n}_");
        solution_report(&mut report, &p, &mesh, &sol, l2);
        if let Some(e) = l2 {
            errors.push((1.0 / n as f64, e));
            scale = scale.max(sol.u_max.abs()).max(sol.u_min.abs());
        }
    }
    if errors.len() >= 2 {
        let roundoff = errors.iter().all(|&(_, e)| e <= 1e-10 * scale.max(1.0));
        if roundoff {
            report.push("slope", "n/a".to_string());
        } else {
            let slope = fit_slope(&errors);
            report.push("slope", format!("{slope:.3}"));
            // error reduction factor per h-halving implied by the fit
            report.push("reduction_factor", format!("{:.3}", 2f64.powf(slope)));
            for k in 1..errors.len() {
                report.push(
                    format!("ratio_{}", k),
                    format!("{:.3}", errors[k - 1].1 / errors[k].1),
                );
            }
        }
    }
    report.print_and_write(args.common.out.as_deref())?;
    Ok(())
}

/// Least-squares slope of log(error) against log(h).
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(h, e) in points {
        let x = h.ln();
        let y = e.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [4.0f64, 8.0, 16.0]
            .iter()
            .map(|&n| (1.0 / n, (1.0 / n).powi(2) * 3.0))
            .collect();
        approx::assert_relative_eq!(fit_slope(&pts), 2.0, epsilon = 1e-12);
    }
}
