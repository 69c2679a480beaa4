use anisofem::cli::{self, AdaptArgs, CommonArgs, ConvergenceArgs};
use anisofem::metric::MetricKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "anisofem",
    about = "Anisotropic diffusion FEM solver with metric-based mesh adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Mesh: a MEDIT file path or a generator spec (cube:N, hole:N,
    /// box:NX,NY,NZ[,mirror]); defaults to the config's mesh key
    #[arg(long)]
    mesh: Option<String>,
    /// Output directory for meshes, VTK files and reports
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory
    #[arg(long)]
    force: bool,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Seed recorded in the run manifest
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs {
            config: c.config,
            mesh: c.mesh,
            out: c.out,
            force: c.force,
            threads: c.threads,
            seed: c.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem once and report diagnostics
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Run the adaptive solve-recover-metric-remesh loop
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Metric tensor choice
        #[arg(long, value_parser = parse_metric, default_value = "id")]
        metric: MetricKind,
        /// Adaptation iterations
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        /// Element budget for the regenerated meshes
        #[arg(long)]
        target_n: Option<usize>,
        /// Mesh generation backend: affine, bisect or external
        #[arg(long, default_value = "bisect")]
        backend: String,
        /// External mesher command template with {in_mesh} {in_sol}
        /// {out_mesh} placeholders
        #[arg(long)]
        mesher_cmd: Option<String>,
    },
    /// Report mesh quality measures and maximum-principle conditions
    Audit {
        #[command(flatten)]
        common: Common,
    },
    /// Uniform-refinement convergence study
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subdivision counts, e.g. 4,8,16
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
    },
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    MetricKind::parse(s).ok_or_else(|| format!("unknown metric '{s}' (id|adap|dmp|dmpadap)"))
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { common } => cli::cmd_solve(&common.into()),
        Command::Adapt {
            common,
            metric,
            iterations,
            target_n,
            backend,
            mesher_cmd,
        } => cli::cmd_adapt(&AdaptArgs {
            common: common.into(),
            metric,
            iterations,
            target_n,
            backend,
            mesher_cmd,
        }),
        Command::Audit { common } => cli::cmd_audit(&common.into()),
        Command::Convergence { common, n } => cli::cmd_convergence(&ConvergenceArgs {
            common: common.into(),
            n_list: n,
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
