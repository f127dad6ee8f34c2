use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cardioflow::bench::{emit_results, sweep, ExperimentConfig};
use cardioflow::constraints::{build_constraints, ConstraintField};
use cardioflow::flowsolve::{solve, SolverConfig};
use cardioflow::meshgen::{build_lv_mesh, MeshParams, TriangleMesh};
use cardioflow::metrics::full_report;
use cardioflow::phantom::{Phantom, PhantomSpec, TorsionSpec};
use cardioflow::spectral::{correspond, CorrespondParams, PointMap};
use cardioflow::volgrid::{read_flow, read_mask, read_volume, write_flow, write_mask, write_volume};

#[derive(Parser)]
#[command(name = "cardioflow", version, about = "Spectrally constrained 3D optical flow for LV volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic phantom pairs.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// LV surface meshes.
    #[command(subcommand)]
    Mesh(MeshCmd),
    /// ZoomOut point map from the source mesh to the target mesh.
    Correspond(CorrespondArgs),
    /// Rasterised correspondence constraints on the LV hull.
    Constraints(ConstraintsArgs),
    /// Two-phase coarse-to-fine flow estimation.
    Solve(SolveArgs),
    /// Compare a predicted flow with ground truth.
    Evaluate(EvaluateArgs),
    /// Benchmark sweeps.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Write a systole/diastole pair, masks and ground-truth flow.
    Generate {
        /// JSON with `phantom`, `angle` and `center_offset`; defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MeshCmd {
    /// Mask → morphology → marching cubes → spectral smoothing → OFF.
    Build {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        close: usize,
        #[arg(long, default_value_t = 7)]
        open: usize,
        #[arg(long, default_value_t = 120)]
        eigs: usize,
    },
}

#[derive(Args)]
struct CorrespondArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    #[arg(long, default_value_t = 3)]
    k0: usize,
    #[arg(long, default_value_t = 130)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    step: usize,
    #[arg(long, default_value_t = 50)]
    wks: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConstraintsArgs {
    #[arg(long)]
    pointmap: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    /// Systole segmentation; its hull receives the constraints.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Systole (fixed) volume.
    #[arg(long)]
    src: PathBuf,
    /// Diastole (moving) volume.
    #[arg(long)]
    dst: PathBuf,
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Solver settings as JSON; missing keys take the 64³ defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration loss values.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run every (angle, center, seed, method) cell and write CSV/SVG results.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent groups; defaults to the number of CPUs.
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Input of `phantom generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct GenerateConfig {
    phantom: PhantomSpec,
    /// Torsion angle, degrees.
    angle: f64,
    /// Torsion centre offset along the long axis, voxels.
    center_offset: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            phantom: PhantomSpec::default(),
            angle: 20.0,
            center_offset: 0.0,
        }
    }
}

/// `pair.json` written next to the generated volumes.
#[derive(Debug, Serialize, Deserialize)]
struct PairManifest {
    torsion: TorsionSpec,
    phantom: PhantomSpec,
    systole: String,
    diastole: String,
    systole_mask: String,
    diastole_mask: String,
    flow: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn generate(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: GenerateConfig = match config {
        Some(p) => read_json(p)?,
        None => GenerateConfig::default(),
    };
    let phantom = Phantom::new(cfg.phantom.clone())?;
    let torsion = phantom.spec().torsion(cfg.angle, cfg.center_offset);
    let pair = phantom.pair(&torsion)?;
    fs::create_dir_all(out)?;
    let manifest = PairManifest {
        torsion,
        phantom: cfg.phantom,
        systole: "systole.volhdr".into(),
        diastole: "diastole.volhdr".into(),
        systole_mask: "systole_mask.volhdr".into(),
        diastole_mask: "diastole_mask.volhdr".into(),
        flow: "gt_flow.volhdr".into(),
    };
    write_volume(&pair.systole, &out.join(&manifest.systole))?;
    write_volume(&pair.diastole, &out.join(&manifest.diastole))?;
    write_mask(&pair.systole_mask, &out.join(&manifest.systole_mask))?;
    write_mask(&pair.diastole_mask, &out.join(&manifest.diastole_mask))?;
    write_flow(&pair.flow, &out.join(&manifest.flow))?;
    write_json(&manifest, &out.join("pair.json"))?;
    log::info!("wrote phantom pair to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Phantom(PhantomCmd::Generate { config, out }) => generate(config.as_deref(), &out)?,
        Command::Mesh(MeshCmd::Build {
            mask,
            out,
            close,
            open,
            eigs,
        }) => {
            let mesh = build_lv_mesh(&read_mask(&mask)?, &MeshParams { close, open, eigs })?;
            mesh.write_off(&out)?;
            log::info!("{} vertices, {} triangles", mesh.vertex_count(), mesh.triangle_count());
        }
        Command::Correspond(a) => {
            let params = CorrespondParams {
                k0: a.k0,
                iterations: a.iters,
                step: a.step,
                wks: a.wks,
            };
            let (fm, pmap) = correspond(&TriangleMesh::read_off(&a.src)?, &TriangleMesh::read_off(&a.dst)?, &params)?;
            if fm.rank_deficient {
                log::warn!("initial functional map was rank deficient");
            }
            pmap.write_json(&a.out)?;
        }
        Command::Constraints(a) => {
            let pmap = PointMap::read_json(&a.pointmap)?;
            let src = TriangleMesh::read_off(&a.src)?;
            let dst = TriangleMesh::read_off(&a.dst)?;
            let field = build_constraints(&pmap, &src, &dst, &read_mask(&a.mask)?)?;
            log::info!("{} constrained voxels", field.valid_count());
            field.write(&a.out)?;
        }
        Command::Solve(a) => {
            let config: SolverConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => SolverConfig::desk(),
            };
            let constraints = a.constraints.as_deref().map(ConstraintField::read).transpose()?;
            let sol = solve(
                &read_volume(&a.src)?,
                &read_volume(&a.dst)?,
                constraints.as_ref(),
                None,
                &config,
            )?;
            write_flow(&sol.flow, &a.out)?;
            if let Some(log_path) = &a.log {
                sol.report.write_csv(log_path)?;
            }
            if let Some(last) = sol.report.last() {
                log::info!("{} iterations, final total loss {:.6}", sol.iterations, last.total);
            }
        }
        Command::Evaluate(a) => {
            let report = full_report(&read_flow(&a.pred)?, &read_flow(&a.gt)?, &read_mask(&a.mask)?)?;
            write_json(&report, &a.out)?;
            println!("mepe_myo {:.6}", report.mepe_myo);
        }
        Command::Bench(BenchCmd::Sweep { config, out, workers }) => {
            let cfg: ExperimentConfig = match &config {
                Some(p) => read_json(p)?,
                None => ExperimentConfig::default(),
            };
            let cfg = cfg.with_env_seed()?;
            let workers = match workers {
                Some(0) => bail!("--workers must be at least 1"),
                Some(w) => w,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
            log::info!("{} cells on {workers} worker(s)", cfg.cell_count());
            let result = sweep(&cfg, workers)?;
            emit_results(&result, &out)?;
            let failed = result.failures();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", result.cells.len());
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
