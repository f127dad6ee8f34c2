//! Coarse-to-fine variational 3D optical flow with an optional surface
//! constraint term.
//!
//! The flow maps systole (fixed) coordinates toward their diastole
//! positions: the diastole image sampled at `p + flow(p)` should reproduce
//! the systole image at `p`.

mod losses;
mod pyramid;

pub use losses::{
    gradients, loss_constraints, loss_l1, loss_l1_smooth, loss_overlap, loss_smooth, loss_ssim,
    warp, CHARBONNIER_EPS, SSIM_WINDOW,
};
pub use pyramid::{build_pyramid, downsample_flow, pyramid_dims, upsample_flow, MIN_LEVEL_AXIS};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintField;
use crate::error::{Error, Result};
use crate::volgrid::{BinaryVolume, Dims, FlowField, ScalarVolume, Vec3};
use losses::{chain, charbonnier_raw, constraints_raw, overlap_raw, smooth_raw, warp_grad_raw, SsimTarget};

/// A loss weight: one value for every level, or one per level (finest
/// first; the last entry repeats for deeper levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelWeight {
    Scalar(f64),
    PerLevel(Vec<f64>),
}

impl LevelWeight {
    pub fn at(&self, level: usize) -> f64 {
        match self {
            LevelWeight::Scalar(v) => *v,
            LevelWeight::PerLevel(v) => v.get(level).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            LevelWeight::Scalar(v) => vec![*v],
            LevelWeight::PerLevel(v) => v.clone(),
        }
    }

    pub fn any_positive(&self) -> bool {
        self.values().iter().any(|&v| v > 0.0)
    }
}

impl From<f64> for LevelWeight {
    fn from(v: f64) -> Self {
        LevelWeight::Scalar(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub levels: usize,
    pub iters_unconstrained: usize,
    pub iters_constrained: usize,
    pub lambda_l1: LevelWeight,
    pub lambda_ssim: LevelWeight,
    pub lambda_constraints: LevelWeight,
    pub lambda_smooth: LevelWeight,
    pub lambda_overlap: LevelWeight,
    /// Adam step in voxels per iteration.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Keep a full-resolution copy of the flow every this many iterations
    /// (0 disables snapshots).
    pub snapshot_interval: usize,
    /// Stop after this many iterations in total, across phases and levels.
    pub max_iterations: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            levels: 7,
            iters_unconstrained: 2500,
            iters_constrained: 2500,
            lambda_l1: 3.0.into(),
            lambda_ssim: 1.0.into(),
            lambda_constraints: 100.0.into(),
            lambda_smooth: 0.1.into(),
            lambda_overlap: 0.0.into(),
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            weight_decay: 1e-6,
            snapshot_interval: 250,
            max_iterations: None,
        }
    }
}

impl SolverConfig {
    /// Defaults with the 4-level pyramid used for 64³ volumes.
    pub fn desk() -> Self {
        SolverConfig {
            levels: 4,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.levels == 0 {
            return bad("levels must be >= 1".into());
        }
        for (name, w) in [
            ("lambda_l1", &self.lambda_l1),
            ("lambda_ssim", &self.lambda_ssim),
            ("lambda_constraints", &self.lambda_constraints),
            ("lambda_smooth", &self.lambda_smooth),
            ("lambda_overlap", &self.lambda_overlap),
        ] {
            if w.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("moment decays must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) || self.weight_decay < 0.0 {
            return bad("epsilon must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}

/// Loss values at one iteration, before that iteration's update. `l1` is
/// the Charbonnier-smoothed form that enters `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: usize,
    pub level: usize,
    pub iteration: usize,
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    pub constraints: f64,
    pub smooth: f64,
    pub overlap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub records: Vec<LossRecord>,
}

impl LossReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub flow: FlowField,
    pub report: LossReport,
    /// `(iterations completed, full-resolution flow)`.
    pub snapshots: Vec<(usize, FlowField)>,
    pub iterations: usize,
    /// Full-resolution flow at the end of phase 1, when phase 1 ran to
    /// completion. It does not depend on the constraint field.
    pub phase_one: Option<FlowField>,
}

/// Region indicators for the overlap term: the diastole LV region is warped,
/// the systole LV region is the reference.
#[derive(Debug, Clone, Copy)]
pub struct OverlapMasks<'a> {
    pub moving: &'a BinaryVolume,
    pub fixed: &'a BinaryVolume,
}

struct Weights {
    l1: f64,
    ssim: f64,
    constraints: f64,
    smooth: f64,
    overlap: f64,
}

struct Level<'a> {
    moving: ScalarVolume,
    ssim: Option<SsimTarget>,
    target: ScalarVolume,
    overlap: Option<(Vec<f64>, Vec<f64>)>,
    constraints: Option<&'a ConstraintField>,
    weights: Weights,
}

impl Level<'_> {
    fn evaluate(&self, flow: &FlowField, phase: usize, level: usize, iteration: usize) -> (LossRecord, Vec<Vec3>) {
        let d = flow.dims();
        let u = flow.vectors();
        let w = &self.weights;
        let mut grad = vec![[0.0; 3]; u.len()];
        let (warped, img_grad) = warp_grad_raw(self.moving.data(), d, u);
        let mut rec = LossRecord {
            phase,
            level,
            iteration,
            total: 0.0,
            l1: 0.0,
            ssim: 0.0,
            constraints: 0.0,
            smooth: 0.0,
            overlap: 0.0,
        };
        if w.l1 > 0.0 {
            let (v, dl) = charbonnier_raw(&warped, self.target.data());
            rec.l1 = v;
            chain(&dl, &img_grad, w.l1, &mut grad);
        }
        if let (true, Some(t)) = (w.ssim > 0.0, &self.ssim) {
            let (v, dl) = t.loss(&warped, true);
            rec.ssim = v;
            chain(&dl.expect("gradient requested"), &img_grad, w.ssim, &mut grad);
        }
        if let (true, Some(cf)) = (w.constraints > 0.0, self.constraints) {
            let (v, g) = constraints_raw(u, cf);
            rec.constraints = v;
            add_scaled(&mut grad, &g, w.constraints);
        }
        if w.smooth > 0.0 {
            let (v, g) = smooth_raw(u, d, true);
            rec.smooth = v;
            add_scaled(&mut grad, &g, w.smooth);
        }
        if let (true, Some((moving, fixed))) = (w.overlap > 0.0, &self.overlap) {
            let (a, ga) = warp_grad_raw(moving, d, u);
            let (v, dl) = overlap_raw(&a, fixed);
            rec.overlap = v;
            chain(&dl, &ga, w.overlap, &mut grad);
        }
        rec.total = w.l1 * rec.l1
            + w.ssim * rec.ssim
            + w.constraints * rec.constraints
            + w.smooth * rec.smooth
            + w.overlap * rec.overlap;
        (rec, grad)
    }
}

fn add_scaled(out: &mut [Vec3], g: &[Vec3], s: f64) {
    for (o, g) in out.iter_mut().zip(g) {
        for c in 0..3 {
            o[c] += s * g[c];
        }
    }
}

/// Adam with coupled weight decay over per-voxel flow vectors.
struct Adam {
    m: Vec<Vec3>,
    v: Vec<Vec3>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![[0.0; 3]; n],
            v: vec![[0.0; 3]; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &SolverConfig, params: &mut [Vec3], grad: &[Vec3], grad_scale: f64) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            for c in 0..3 {
                let g = grad_scale * grad[i][c] + cfg.weight_decay * params[i][c];
                let m = cfg.beta1 * self.m[i][c] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * self.v[i][c] + (1.0 - cfg.beta2) * g * g;
                self.m[i][c] = m;
                self.v[i][c] = v;
                params[i][c] -= cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

fn resample_to(flow: FlowField, dims: Dims) -> FlowField {
    let mut f = flow;
    while f.dims().nx > dims.nx {
        let next = Dims::new(f.dims().nx / 2, f.dims().ny / 2, f.dims().nz / 2);
        f = downsample_flow(&f, next);
    }
    f
}

fn to_finest(flow: &FlowField, dims: &[Dims]) -> FlowField {
    let mut f = flow.clone();
    let mut level = dims.iter().position(|d| *d == f.dims()).expect("flow on a pyramid level");
    while level > 0 {
        level -= 1;
        f = upsample_flow(&f, dims[level]);
    }
    f
}

/// Per-level iteration counts, coarsest last: an even split with the
/// remainder going to the finest level.
fn split_iterations(total: usize, levels: usize) -> Vec<usize> {
    let mut v = vec![total / levels; levels];
    v[0] += total % levels;
    v
}

/// Two-phase coarse-to-fine optimisation. Phase 1 ignores constraints;
/// phase 2 restarts the pyramid from the phase-1 flow and adds the
/// constraint term at the finest level. Without a constraint field only
/// phase 1 runs.
pub fn solve(
    systole: &ScalarVolume,
    diastole: &ScalarVolume,
    constraints: Option<&ConstraintField>,
    overlap: Option<OverlapMasks<'_>>,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let d0 = systole.dims();
    d0.ensure_same(&diastole.dims())?;
    if let Some(cf) = constraints {
        d0.ensure_same(&cf.dims())?;
    }
    if let Some(m) = overlap {
        d0.ensure_same(&m.moving.dims())?;
        d0.ensure_same(&m.fixed.dims())?;
    } else if config.lambda_overlap.any_positive() {
        return Err(Error::InvalidConfig("lambda_overlap > 0 requires region masks".into()));
    }
    let dims = pyramid_dims(d0, config.levels)?;
    let mov = build_pyramid(diastole, config.levels)?;
    let tgt = build_pyramid(systole, config.levels)?;
    let masks: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = overlap.map(|m| {
        let pyr = |b: &BinaryVolume| {
            build_pyramid(&b.to_scalar(), config.levels)
                .expect("same dims as images")
                .into_iter()
                .map(ScalarVolume::into_data)
                .collect()
        };
        (pyr(m.moving), pyr(m.fixed))
    });

    let make_level = |l: usize, phase: usize| -> Result<Level<'_>> {
        let weights = Weights {
            l1: config.lambda_l1.at(l),
            ssim: config.lambda_ssim.at(l),
            constraints: if phase == 2 && l == 0 { config.lambda_constraints.at(l) } else { 0.0 },
            smooth: config.lambda_smooth.at(l),
            overlap: config.lambda_overlap.at(l),
        };
        Ok(Level {
            moving: mov[l].clone(),
            ssim: if weights.ssim > 0.0 { Some(SsimTarget::new(&tgt[l])?) } else { None },
            target: tgt[l].clone(),
            overlap: masks.as_ref().map(|(a, b)| (a[l].clone(), b[l].clone())),
            constraints: if phase == 2 && l == 0 { constraints } else { None },
            weights,
        })
    };

    let cap = config.max_iterations.unwrap_or(usize::MAX);
    let mut report = LossReport::default();
    let mut snapshots = Vec::new();
    let mut done = 0usize;
    let mut flow = FlowField::zeros(dims[config.levels - 1]);
    let mut phase_one = None;
    let phases: &[(usize, usize)] = if constraints.is_some() {
        &[(1, config.iters_unconstrained), (2, config.iters_constrained)]
    } else {
        &[(1, config.iters_unconstrained)]
    };
    'outer: for &(phase, total) in phases {
        let split = split_iterations(total, config.levels);
        for l in (0..config.levels).rev() {
            if done >= cap {
                break 'outer;
            }
            flow = if flow.dims() == dims[l] {
                flow
            } else if flow.dims().nx > dims[l].nx {
                resample_to(flow, dims[l])
            } else {
                upsample_flow(&flow, dims[l])
            };
            if split[l] == 0 {
                continue;
            }
            let level = make_level(l, phase)?;
            // scaling by the voxel count keeps mean-type gradients above
            // Adam's epsilon at every level; the minimiser is unchanged
            let grad_scale = dims[l].len() as f64;
            let mut adam = Adam::new(dims[l].len());
            for _ in 0..split[l] {
                if done >= cap {
                    break 'outer;
                }
                let (rec, grad) = level.evaluate(&flow, phase, l, done);
                let finite = [rec.total, rec.l1, rec.ssim, rec.constraints, rec.smooth, rec.overlap]
                    .iter()
                    .all(|v| v.is_finite());
                if !finite || grad.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        phase,
                        level: l,
                        iteration: done,
                        detail: format!("{rec:?}"),
                    });
                }
                report.records.push(rec);
                adam.step(config, flow.vectors_mut(), &grad, grad_scale);
                done += 1;
                if config.snapshot_interval > 0 && done % config.snapshot_interval == 0 {
                    snapshots.push((done, to_finest(&flow, &dims)));
                }
            }
        }
        if phase == 1 {
            phase_one = Some(to_finest(&flow, &dims));
        }
    }
    if !flow.vectors().iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            phase: 0,
            level: 0,
            iteration: done,
            detail: "flow diverged".into(),
        });
    }
    Ok(Solution {
        flow: to_finest(&flow, &dims),
        report,
        snapshots,
        iterations: done,
        phase_one,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_gives_remainder_to_finest() {
        assert_eq!(split_iterations(10, 4), vec![4, 2, 2, 2]);
        assert_eq!(split_iterations(3, 4), vec![3, 0, 0, 0]);
    }

    #[test]
    fn weights_per_level() {
        let w: LevelWeight = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!((w.at(0), w.at(1), w.at(5)), (1.0, 2.0, 2.0));
        let s: LevelWeight = serde_json::from_str("0.5").unwrap();
        assert_eq!(s.at(3), 0.5);
        let cfg: SolverConfig = serde_json::from_str(r#"{"levels": 4, "lambda_smooth": [0.1, 0.2]}"#).unwrap();
        assert_eq!(cfg.levels, 4);
        assert_eq!(cfg.lambda_l1, LevelWeight::Scalar(3.0));
        assert_eq!(cfg.lambda_smooth.at(1), 0.2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SolverConfig::desk();
        c.lambda_ssim = LevelWeight::Scalar(-1.0);
        assert!(c.validate().is_err());
        let mut c = SolverConfig::desk();
        c.levels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identical_pair_stays_near_zero() {
        let d = Dims::cube(16);
        let v = ScalarVolume::from_fn(d, |x, y, z| ((x as f64 * 0.7).sin() + (y as f64 * 0.4 + z as f64 * 0.3).cos()) * 0.3);
        let cfg = SolverConfig {
            levels: 2,
            iters_unconstrained: 300,
            ..SolverConfig::desk()
        };
        let sol = solve(&v, &v, None, None, &cfg).unwrap();
        // round-off seeds small Adam oscillations; they must stay sub-voxel
        assert!(sol.flow.mean_norm() <= 0.05, "{}", sol.flow.mean_norm());
        assert_eq!(sol.iterations, 300);
        let r = sol.report.last().unwrap();
        assert_eq!(r.total, 3.0 * r.l1 + r.ssim + 0.1 * r.smooth);
    }

    #[test]
    fn iteration_cap_truncates() {
        let d = Dims::cube(8);
        let v = ScalarVolume::from_fn(d, |x, _, _| x as f64);
        let cfg = SolverConfig {
            levels: 1,
            iters_unconstrained: 50,
            max_iterations: Some(7),
            snapshot_interval: 5,
            ..SolverConfig::desk()
        };
        let sol = solve(&v, &v, None, None, &cfg).unwrap();
        assert_eq!(sol.iterations, 7);
        assert_eq!(sol.report.records.len(), 7);
        assert_eq!(sol.snapshots.len(), 1);
    }
}
