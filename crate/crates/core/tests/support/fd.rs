//! Central finite-difference checks of the analytic loss gradients.


use cardioflow::constraints::ConstraintField;
use cardioflow::flowsolve::{
    gradients, loss_constraints, loss_l1_smooth, loss_overlap, loss_smooth, loss_ssim, warp,
};
use cardioflow::volgrid::{BinaryVolume, Dims, FlowField, ScalarVolume, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_INSTANCES: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    L1,
    Ssim,
    Constraints,
    Smooth,
    Overlap,
}

pub const TERMS: [Term; 5] = [Term::L1, Term::Ssim, Term::Constraints, Term::Smooth, Term::Overlap];

/// Flow whose sample points `p + u(p)` stay inside the grid and at least
/// 0.1 voxel away from any integer coordinate, so trilinear sampling is
/// smooth within ±FD_STEP.
pub fn kink_free_flow(rng: &mut ChaCha8Rng, d: Dims) -> FlowField {
    let lens = d.as_array();
    FlowField::from_fn(d, |x, y, z| {
        let p = [x, y, z];
        std::array::from_fn(|c| {
            let cell = rng.random_range(0..lens[c] - 1) as f64;
            let q = cell + rng.random_range(0.1..0.9);
            // keep displacements moderate so neighbouring samples stay nearby
            let q = if (q - p[c] as f64).abs() > 2.5 { p[c].min(lens[c] - 2) as f64 + rng.random_range(0.1..0.9) } else { q };
            q - p[c] as f64
        })
    })
}

fn random_volume(rng: &mut ChaCha8Rng, d: Dims) -> ScalarVolume {
    ScalarVolume::from_fn(d, |_, _, _| rng.random_range(0.0..1.0))
}

fn random_mask(rng: &mut ChaCha8Rng, d: Dims) -> BinaryVolume {
    BinaryVolume::from_fn(d, |_, _, _| rng.random_bool(0.4))
}

struct Instance {
    flow: FlowField,
    moving: ScalarVolume,
    target: ScalarVolume,
    cf: ConstraintField,
    mask_moving: BinaryVolume,
    mask_fixed: BinaryVolume,
}

impl Instance {
    fn new(seed: u64) -> Self {
        let d = Dims::cube(8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow = kink_free_flow(&mut rng, d);
        let moving = random_volume(&mut rng, d);
        let target = random_volume(&mut rng, d);
        let valid: Vec<bool> = (0..d.len()).map(|_| rng.random_bool(0.3)).collect();
        let vectors: Vec<Vec3> = valid
            .iter()
            .map(|&on| if on { std::array::from_fn(|_| rng.random_range(-3.0..3.0)) } else { [0.0; 3] })
            .collect();
        let cf = ConstraintField::new(d, vectors, valid).expect("valid field");
        Instance {
            flow,
            moving,
            target,
            cf,
            mask_moving: random_mask(&mut rng, d),
            mask_fixed: random_mask(&mut rng, d),
        }
    }

    fn value(&self, term: Term, flow: &FlowField) -> f64 {
        match term {
            Term::L1 => loss_l1_smooth(&warp(&self.moving, flow).unwrap(), &self.target).unwrap(),
            Term::Ssim => loss_ssim(&warp(&self.moving, flow).unwrap(), &self.target).unwrap(),
            Term::Constraints => loss_constraints(flow, &self.cf).unwrap(),
            Term::Smooth => loss_smooth(flow).unwrap(),
            Term::Overlap => loss_overlap(flow, &self.mask_moving, &self.mask_fixed).unwrap(),
        }
    }

    fn analytic(&self, term: Term) -> (f64, Vec<Vec3>) {
        let f = &self.flow;
        match term {
            Term::L1 => gradients::l1_smooth(f, &self.moving, &self.target),
            Term::Ssim => gradients::ssim(f, &self.moving, &self.target),
            Term::Constraints => gradients::constraints(f, &self.cf),
            Term::Smooth => gradients::smooth(f),
            Term::Overlap => gradients::overlap(f, &self.mask_moving, &self.mask_fixed),
        }
        .unwrap()
    }

    /// The L1 constraint term has a kink where a flow component equals the
    /// constraint; such components are left out of the comparison.
    fn near_kink(&self, term: Term, i: usize, c: usize) -> bool {
        term == Term::Constraints
            && self.cf.valid()[i]
            && (self.flow.vectors()[i][c] - self.cf.vectors()[i][c]).abs() < 10.0 * FD_STEP
    }
}

/// Result of one finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdResult {
    pub relative_error: f64,
    /// `|value reported with the gradient − value from the loss function|`.
    pub value_mismatch: f64,
    pub skipped: usize,
}

/// `‖g_fd − g_an‖ / ‖g_an‖` over all flow components of one random 8³ instance.
pub fn fd_check(term: Term, seed: u64) -> FdResult {
    let inst = Instance::new(seed);
    let (value, grad) = inst.analytic(term);
    let base = inst.value(term, &inst.flow);
    let (mut num, mut den, mut skipped) = (0.0, 0.0, 0);
    let mut probe = inst.flow.clone();
    for i in 0..grad.len() {
        for c in 0..3 {
            if inst.near_kink(term, i, c) {
                skipped += 1;
                continue;
            }
            let orig = probe.vectors()[i][c];
            probe.vectors_mut()[i][c] = orig + FD_STEP;
            let up = inst.value(term, &probe);
            probe.vectors_mut()[i][c] = orig - FD_STEP;
            let down = inst.value(term, &probe);
            probe.vectors_mut()[i][c] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            num += (fd - grad[i][c]).powi(2);
            den += grad[i][c].powi(2);
        }
    }
    FdResult {
        relative_error: num.sqrt() / den.sqrt(),
        value_mismatch: (value - base).abs(),
        skipped,
    }
}

/// Worst relative error over the standard instance set.
pub fn worst_fd_error(term: Term) -> f64 {
    (0..FD_INSTANCES).map(|s| fd_check(term, 1000 + s).relative_error).fold(0.0, f64::max)
}
