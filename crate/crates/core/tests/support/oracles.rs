//! Brute-force recomputation of the evaluation metrics with nalgebra,
//! written independently of the library formulas.

use cardioflow::metrics::{angular_error, decompose_cylindrical, local_decompose, mepe, LongAxis};
use cardioflow::volgrid::{BinaryVolume, Dims, FlowField, Vec3};
use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

fn v3(a: Vec3) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Largest deviations found on one random instance.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGap {
    /// Library value vs brute-force value.
    pub oracle: f64,
    /// Recomposition and Pythagoras residuals.
    pub identity: f64,
}

impl OracleGap {
    pub fn max(self, o: OracleGap) -> OracleGap {
        OracleGap {
            oracle: self.oracle.max(o.oracle),
            identity: self.identity.max(o.identity),
        }
    }
}

/// Random fields on a 7×6×5 grid with a random region, a random tilted
/// axis and random unit normals.
pub fn metric_gap(seed: u64) -> OracleGap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Dims::new(7, 6, 5);
    let rand_flow = |rng: &mut ChaCha8Rng| {
        FlowField::from_fn(d, |_, _, _| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
    };
    let pred = rand_flow(&mut rng);
    let gt = rand_flow(&mut rng);
    let region = BinaryVolume::from_fn(d, |_, _, _| rng.random_bool(0.6));
    let region = if region.is_all_unset() { BinaryVolume::from_fn(d, |_, _, _| true) } else { region };
    let mut gap = OracleGap::default();
    let mut note = |lib: f64, oracle: f64| gap.oracle = gap.oracle.max((lib - oracle).abs());

    // endpoint error
    let inside: Vec<usize> = (0..d.len()).filter(|&i| region.data()[i]).collect();
    let bf: f64 = inside
        .iter()
        .map(|&i| (v3(pred.vectors()[i]) - v3(gt.vectors()[i])).norm())
        .sum::<f64>()
        / inside.len() as f64;
    note(mepe(&pred, &gt, &region).unwrap(), bf);

    // angle via atan2 of the cross and dot products
    let angles: Vec<f64> = inside
        .iter()
        .map(|&i| {
            let (a, b) = (v3(pred.vectors()[i]), v3(gt.vectors()[i]));
            a.cross(&b).norm().atan2(a.dot(&b))
        })
        .collect();
    note(angular_error(&pred, &gt, &region).unwrap().mean, angles.iter().sum::<f64>() / angles.len() as f64);

    // cylindrical frame: r̂ from the orthogonal projector, ĉ by rotating r̂
    // a quarter turn about the axis
    let dir = Unit::new_normalize(Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        1.0,
    ));
    let centroid = Vector3::new(rng.random_range(2.0..4.0), rng.random_range(2.0..4.0), rng.random_range(1.0..3.0));
    let axis = LongAxis {
        direction: [dir.x, dir.y, dir.z],
        centroid: [centroid.x, centroid.y, centroid.z],
    };
    let cyl = decompose_cylindrical(&pred, &axis, &region).unwrap();
    let projector = nalgebra::Matrix3::identity() - dir.into_inner() * dir.transpose();
    let quarter = Rotation3::from_axis_angle(&dir, std::f64::consts::FRAC_PI_2);
    for (k, &i) in cyl.voxels.iter().enumerate() {
        let [x, y, z] = d.coords(i);
        let q = Vector3::new(x as f64, y as f64, z as f64) - centroid;
        let u = v3(pred.vectors()[i]);
        let rp = projector * q;
        note(cyl.longitudinal[k], u.dot(&dir));
        if rp.norm() < 1e-9 {
            continue;
        }
        let r = rp.normalize();
        let c = quarter * r;
        note(cyl.radial[k], u.dot(&r));
        note(cyl.circumferential[k], u.dot(&c));
        let back = r * cyl.radial[k] + c * cyl.circumferential[k] + dir.into_inner() * cyl.longitudinal[k];
        gap.identity = gap.identity.max((back - u).amax());
    }

    // local split: tangential magnitude as ‖n̂ × u‖
    let normals: Vec<Option<Vec3>> = (0..d.len())
        .map(|_| {
            let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            (n.norm() > 0.1).then(|| {
                let n = n.normalize();
                [n.x, n.y, n.z]
            })
        })
        .collect();
    let local = local_decompose(&pred, &region, &normals).unwrap();
    for (k, &i) in local.voxels.iter().enumerate() {
        let n = v3(normals[i].unwrap());
        let u = v3(pred.vectors()[i]);
        note(local.radial[k], u.dot(&n));
        note(local.tangential[k], n.cross(&u).norm());
        let pyth = local.radial[k].powi(2) + local.tangential[k].powi(2) - u.norm_squared();
        gap.identity = gap.identity.max(pyth.abs());
    }
    gap
}

/// Worst gaps over `count` seeded instances.
pub fn worst_metric_gap(count: u64) -> OracleGap {
    (0..count).map(|s| metric_gap(500 + s)).fold(OracleGap::default(), OracleGap::max)
}
