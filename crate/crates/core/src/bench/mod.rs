//! Torsion sweeps comparing the constrained solver with two baselines on
//! phantom pairs with analytic ground truth.

mod report;

pub use report::{emit_results, read_results, summarize, ResultRow, SummaryRow, METRICS};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{build_constraints, ConstraintField};
use crate::error::{Error, Result};
use crate::flowsolve::{solve, OverlapMasks, Solution, SolverConfig};
use crate::meshgen::{build_lv_mesh, MeshParams};
use crate::metrics::{mepe, Evaluator, MetricReport};
use crate::phantom::{Phantom, PhantomPair, PhantomSpec, Texture, MAX_TORSION_DEG};
use crate::spectral::{correspond, CorrespondParams};
use crate::volgrid::{FlowField, Label};

/// Environment variable that replaces `ExperimentConfig::base_seed`.
pub const SEED_ENV: &str = "CARDIOFLOW_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Mesh correspondence constraints in a second phase.
    Constrained,
    /// Image terms only.
    Unconstrained,
    /// Image terms plus a region-overlap loss.
    Overlap,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Constrained, Method::Unconstrained, Method::Overlap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Constrained => "constrained",
            Method::Unconstrained => "unconstrained",
            Method::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Torsion angles, degrees.
    pub angles: Vec<f64>,
    /// Torsion centre offsets along the long axis, voxels.
    pub centers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Replaces `phantom.texture`; a noise seed is re-derived per cell.
    pub texture: Texture,
    pub phantom: PhantomSpec,
    pub solver: SolverConfig,
    pub mesh: MeshParams,
    pub correspondence: CorrespondParams,
    /// Overlap weight of the overlap baseline (other methods use 0).
    pub lambda_overlap: f64,
    /// Pick each result from the snapshot that scores best on a probe pair.
    pub early_stop: bool,
    pub probe_angle: f64,
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            angles: (0..8).map(|i| 5.0 * i as f64).collect(),
            centers: vec![-8.0, 8.0],
            seeds: vec![0, 1, 2],
            methods: Method::ALL.to_vec(),
            texture: Texture::AngularConstant,
            phantom: PhantomSpec::default(),
            solver: SolverConfig::desk(),
            mesh: MeshParams::default(),
            correspondence: CorrespondParams::default(),
            lambda_overlap: 1.0,
            early_stop: false,
            probe_angle: 10.0,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let in_range = |a: f64| (0.0..=MAX_TORSION_DEG).contains(&a);
        if self.angles.is_empty() || self.centers.is_empty() || self.seeds.is_empty() {
            return bad("angles, centers and seeds must be non-empty".into());
        }
        if let Some(a) = self.angles.iter().find(|&&a| !in_range(a)) {
            return bad(format!("angle {a} outside [0, {MAX_TORSION_DEG}]"));
        }
        if self.methods.is_empty() {
            return bad("methods must be non-empty".into());
        }
        if self.centers.iter().any(|c| !c.is_finite()) {
            return bad("centers must be finite".into());
        }
        if !(self.lambda_overlap.is_finite() && self.lambda_overlap >= 0.0) {
            return bad("lambda_overlap must be finite and >= 0".into());
        }
        if self.early_stop {
            if !in_range(self.probe_angle) {
                return bad(format!("probe angle {} outside [0, {MAX_TORSION_DEG}]", self.probe_angle));
            }
            if self.solver.snapshot_interval == 0 {
                return bad("early stopping needs snapshot_interval > 0".into());
            }
        }
        self.solver.validate()?;
        self.phantom_spec(self.seeds[0]).validate()
    }

    /// Applies [`SEED_ENV`] when it is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.base_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    fn cell_seed(&self, seed: u64) -> u64 {
        seed ^ self.base_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    /// Phantom of one seed: shape and noise are re-seeded, the rest is shared.
    pub fn phantom_spec(&self, seed: u64) -> PhantomSpec {
        let s = self.cell_seed(seed);
        let texture = match &self.texture {
            Texture::AngularConstant => Texture::AngularConstant,
            Texture::Noise {
                amplitude,
                correlation_length,
                ..
            } => Texture::Noise {
                seed: s.wrapping_add(1),
                amplitude: *amplitude,
                correlation_length: *correlation_length,
            },
        };
        PhantomSpec {
            shape_seed: s,
            texture,
            ..self.phantom.clone()
        }
    }

    /// Probe torsion centre for a seed, drawn in [-8, 8] voxels.
    fn probe_center(&self, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.cell_seed(seed) ^ 0x5052_4F42_45);
        rng.random_range(-8.0..=8.0)
    }

    pub fn cell_count(&self) -> usize {
        self.angles.len() * self.centers.len() * self.seeds.len() * self.methods.len()
    }
}

/// Identifies one cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub angle: f64,
    pub center: f64,
    pub seed: u64,
    pub method: Method,
}

impl CellKey {
    fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        self.angle
            .total_cmp(&other.angle)
            .then(self.center.total_cmp(&other.center))
            .then(self.seed.cmp(&other.seed))
            .then(self.method.cmp(&other.method))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub report: MetricReport,
    pub iterations: usize,
    /// Seconds spent on this cell; shared phase-1 time is split by
    /// iteration share.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    /// Error message of a failed cell.
    pub outcome: std::result::Result<CellResult, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    fn sort(&mut self) {
        self.cells.sort_by(|a, b| a.key.cmp_key(&b.key));
    }
}

/// One method's flow with its snapshots.
struct Run {
    flow: FlowField,
    iterations: usize,
    snapshots: Vec<(usize, FlowField)>,
    seconds: f64,
}

fn constrained_runs(sol: Solution, seconds: f64, want_unconstrained: bool) -> Vec<(Method, Run)> {
    let phase_one_iters = sol.report.records.iter().filter(|r| r.phase == 1).count();
    let share = phase_one_iters as f64 / sol.iterations.max(1) as f64;
    let mut out = Vec::new();
    if want_unconstrained {
        if let Some(flow) = &sol.phase_one {
            out.push((
                Method::Unconstrained,
                Run {
                    flow: flow.clone(),
                    iterations: phase_one_iters,
                    snapshots: sol.snapshots.iter().filter(|(i, _)| *i <= phase_one_iters).cloned().collect(),
                    seconds: seconds * share,
                },
            ));
        }
    }
    out.push((
        Method::Constrained,
        Run {
            flow: sol.flow,
            iterations: sol.iterations,
            snapshots: sol.snapshots,
            seconds,
        },
    ));
    out
}

/// Runs every requested method on one pair. The unconstrained result is the
/// phase-1 flow of the constrained solve when both are requested.
fn run_methods(cfg: &ExperimentConfig, pair: &PhantomPair, methods: &[Method]) -> BTreeMap<Method, Result<Run>> {
    let mut out = BTreeMap::new();
    let base = SolverConfig {
        lambda_overlap: 0.0.into(),
        ..cfg.solver.clone()
    };
    let want = |m: Method| methods.contains(&m);
    let timed_solve = |constraints: Option<&ConstraintField>,
                       overlap: Option<OverlapMasks<'_>>,
                       config: &SolverConfig|
     -> Result<(Solution, f64)> {
        let t = Instant::now();
        let sol = solve(&pair.systole, &pair.diastole, constraints, overlap, config)?;
        Ok((sol, t.elapsed().as_secs_f64()))
    };

    if want(Method::Constrained) {
        let t = Instant::now();
        let built = (|| {
            let mesh_a = build_lv_mesh(&pair.systole_mask, &cfg.mesh)?;
            let mesh_b = build_lv_mesh(&pair.diastole_mask, &cfg.mesh)?;
            let (_, pmap) = correspond(&mesh_a, &mesh_b, &cfg.correspondence)?;
            build_constraints(&pmap, &mesh_a, &mesh_b, &pair.systole_mask)
        })();
        let prep = t.elapsed().as_secs_f64();
        match built.and_then(|cf| timed_solve(Some(&cf), None, &base)) {
            Ok((sol, secs)) => {
                for (m, mut run) in constrained_runs(sol, secs, want(Method::Unconstrained)) {
                    if m == Method::Constrained {
                        run.seconds += prep;
                    }
                    out.insert(m, Ok(run));
                }
            }
            Err(e) => {
                out.insert(Method::Constrained, Err(e));
            }
        }
    }
    if want(Method::Unconstrained) && !matches!(out.get(&Method::Unconstrained), Some(Ok(_))) {
        out.insert(
            Method::Unconstrained,
            timed_solve(None, None, &base).map(|(sol, secs)| Run {
                flow: sol.flow,
                iterations: sol.iterations,
                snapshots: sol.snapshots,
                seconds: secs,
            }),
        );
    }
    if want(Method::Overlap) {
        let moving = pair.diastole_mask.lv_voxels();
        let fixed = pair.systole_mask.lv_voxels();
        let config = SolverConfig {
            lambda_overlap: cfg.lambda_overlap.into(),
            ..base.clone()
        };
        let masks = OverlapMasks {
            moving: &moving,
            fixed: &fixed,
        };
        out.insert(
            Method::Overlap,
            timed_solve(None, Some(masks), &config).map(|(sol, secs)| Run {
                flow: sol.flow,
                iterations: sol.iterations,
                snapshots: sol.snapshots,
                seconds: secs,
            }),
        );
    }
    out
}

/// Index of the snapshot with the lowest myocardium mEPE against the probe
/// pair's ground truth; ties go to the earliest snapshot.
pub fn early_stop_probe(snapshots: &[(usize, FlowField)], probe: &PhantomPair) -> Result<usize> {
    if snapshots.is_empty() {
        return Err(Error::InvalidData("no snapshots to choose from".into()));
    }
    let region = probe.systole_mask.select(Label::Myocardium);
    let mut best = (f64::INFINITY, 0);
    for (i, (_, flow)) in snapshots.iter().enumerate() {
        let e = mepe(flow, &probe.flow, &region)?;
        if e < best.0 {
            best = (e, i);
        }
    }
    Ok(best.1)
}

/// All methods of one (angle, center, seed) group.
pub fn run_group(cfg: &ExperimentConfig, angle: f64, center: f64, seed: u64) -> Vec<Cell> {
    let key = |method| CellKey {
        angle,
        center,
        seed,
        method,
    };
    let fail_all = |e: Error| {
        cfg.methods
            .iter()
            .map(|&m| Cell {
                key: key(m),
                outcome: Err(e.to_string()),
            })
            .collect()
    };
    let prepared = (|| {
        let phantom = Phantom::new(cfg.phantom_spec(seed))?;
        let pair = phantom.pair(&phantom.spec().torsion(angle, center))?;
        let evaluator = Evaluator::new(&pair.systole_mask)?;
        let probe = if cfg.early_stop {
            Some(phantom.pair(&phantom.spec().torsion(cfg.probe_angle, cfg.probe_center(seed)))?)
        } else {
            None
        };
        Ok((pair, evaluator, probe))
    })();
    let (pair, evaluator, probe) = match prepared {
        Ok(p) => p,
        Err(e) => return fail_all(e),
    };
    let mut runs = run_methods(cfg, &pair, &cfg.methods);
    let probe_runs = probe.as_ref().map(|p| (p, run_methods(cfg, p, &cfg.methods)));

    let mut cells = Vec::new();
    for &m in &cfg.methods {
        let outcome = (|| {
            let run = runs.remove(&m).unwrap_or_else(|| Err(Error::InvalidData("method did not run".into())))?;
            let (flow, iterations) = match &probe_runs {
                None => (run.flow, run.iterations),
                Some((probe, pr)) => {
                    let probe_run = pr
                        .get(&m)
                        .ok_or_else(|| Error::InvalidData("probe run missing".into()))?
                        .as_ref()
                        .map_err(|e| Error::InvalidData(format!("probe run failed: {e}")))?;
                    let idx = early_stop_probe(&probe_run.snapshots, probe)?;
                    let at = probe_run.snapshots[idx].0;
                    let flow = run
                        .snapshots
                        .into_iter()
                        .find(|(i, _)| *i == at)
                        .map(|(_, f)| f)
                        .ok_or_else(|| Error::InvalidData(format!("no snapshot at iteration {at}")))?;
                    (flow, at)
                }
            };
            Ok::<_, Error>(CellResult {
                report: evaluator.report(&flow, &pair.flow)?,
                iterations,
                wall_seconds: run.seconds,
            })
        })();
        cells.push(Cell {
            key: key(m),
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }
    cells
}

/// Runs one cell on its own (no sharing with other methods).
pub fn run_cell(cfg: &ExperimentConfig, angle: f64, center: f64, seed: u64, method: Method) -> Result<CellResult> {
    let single = ExperimentConfig {
        methods: vec![method],
        ..cfg.clone()
    };
    single.validate()?;
    let cell = run_group(&single, angle, center, seed).pop().expect("one method requested");
    cell.outcome.map_err(Error::InvalidData)
}

/// Runs every cell, `workers` groups at a time. Failed cells are recorded
/// and the sweep continues; rows come back sorted by key.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let mut groups = Vec::new();
    for &angle in &cfg.angles {
        for &center in &cfg.centers {
            for &seed in &cfg.seeds {
                groups.push((angle, center, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let total = groups.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let cells: Vec<Cell> = pool.install(|| {
        groups
            .par_iter()
            .flat_map_iter(|&(angle, center, seed)| {
                let cells = run_group(cfg, angle, center, seed);
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                log::info!("group {n}/{total} done: angle {angle}, center {center}, seed {seed}");
                for c in &cells {
                    if let Err(e) = &c.outcome {
                        log::warn!("cell {:?} failed: {e}", c.key);
                    }
                }
                cells
            })
            .collect()
    });
    let mut result = SweepResult { cells };
    result.sort();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::TorsionSpec;
    use crate::volgrid::Dims;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            angles: vec![0.0],
            centers: vec![0.0],
            seeds: vec![0],
            phantom: PhantomSpec {
                dims: Dims::cube(24),
                center: [11.5, 11.5, 12.0],
                inner_radius: 3.0,
                outer_radius: 6.0,
                axial_length: 16.0,
                apex_depth: 6.0,
                ..PhantomSpec::default()
            },
            solver: SolverConfig {
                levels: 2,
                iters_unconstrained: 20,
                iters_constrained: 20,
                snapshot_interval: 10,
                ..SolverConfig::desk()
            },
            ..ExperimentConfig::default()
        }
    }

    fn probe_pair() -> PhantomPair {
        let cfg = tiny();
        let ph = Phantom::new(cfg.phantom_spec(0)).unwrap();
        ph.pair(&TorsionSpec::about_z(10.0, ph.spec().center, 8.0)).unwrap()
    }

    fn offset(flow: &FlowField, dx: f64) -> FlowField {
        FlowField::from_fn(flow.dims(), |x, y, z| {
            let v = flow.get(x, y, z);
            [v[0] + dx, v[1], v[2]]
        })
    }

    #[test]
    fn probe_examples() {
        let p = probe_pair();
        let snap = |dx: f64| (0, offset(&p.flow, dx));
        assert_eq!(early_stop_probe(&[snap(0.3)], &p).unwrap(), 0);
        let falling: Vec<_> = [2.0, 1.5, 1.0, 0.5].into_iter().map(snap).collect();
        assert_eq!(early_stop_probe(&falling, &p).unwrap(), 3);
        let dip: Vec<_> = [2.0, 1.5, 1.0, 0.2, 0.6, 0.9].into_iter().map(snap).collect();
        assert_eq!(early_stop_probe(&dip, &p).unwrap(), 3);
        assert!(early_stop_probe(&[], &p).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let c = ExperimentConfig {
            angles: vec![10.0, 36.0],
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            methods: vec![],
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            early_stop: true,
            solver: SolverConfig {
                snapshot_interval: 0,
                ..SolverConfig::desk()
            },
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn methods_parse_and_serialize() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("deepstrain".parse::<Method>().is_err());
    }

    #[test]
    fn seeds_reshape_phantom_and_noise() {
        let cfg = ExperimentConfig {
            texture: Texture::Noise {
                seed: 0,
                amplitude: 0.1,
                correlation_length: 4.0,
            },
            ..ExperimentConfig::default()
        };
        let (a, b) = (cfg.phantom_spec(0), cfg.phantom_spec(1));
        assert_ne!(a.shape_seed, b.shape_seed);
        assert_ne!(a.texture, b.texture);
        let shifted = ExperimentConfig { base_seed: 7, ..cfg.clone() };
        assert_ne!(shifted.phantom_spec(0).shape_seed, a.shape_seed);
    }

    #[test]
    fn shared_phase_one_matches_a_separate_unconstrained_run() {
        let cfg = tiny();
        let group = run_group(&cfg, 0.0, 0.0, 0);
        let alone = run_cell(&cfg, 0.0, 0.0, 0, Method::Unconstrained).unwrap();
        let shared = group.iter().find(|c| c.key.method == Method::Unconstrained).unwrap();
        let shared = shared.outcome.as_ref().unwrap();
        assert_eq!(shared.report, alone.report);
        assert_eq!(shared.iterations, alone.iterations);
        let constrained = group.iter().find(|c| c.key.method == Method::Constrained).unwrap();
        assert_eq!(constrained.outcome.as_ref().unwrap().iterations, 40);
    }

    #[test]
    fn early_stop_picks_a_snapshot_iteration() {
        let cfg = ExperimentConfig {
            early_stop: true,
            methods: vec![Method::Unconstrained],
            ..tiny()
        };
        let r = run_cell(&cfg, 0.0, 0.0, 0, Method::Unconstrained).unwrap();
        assert!([10, 20].contains(&r.iterations), "{}", r.iterations);
    }
}
