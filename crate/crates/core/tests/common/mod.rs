#![allow(dead_code)]

use epishape::stats::MonotoneEvent;
use epishape::{Dim, Direction, FieldConfig, OrientedBond, RecoveryDist, Site};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn field(d: usize, lambda: f64, rec: &str, seed: u64) -> FieldConfig {
    FieldConfig::new(Dim::new(d).unwrap(), lambda, rec.parse().unwrap(), seed).unwrap()
}

/// Composite Simpson rule with `2m` panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let n = 2 * m;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `E[g(T)]` by quadrature against the density of `T`, for `g` bounded by 1.
pub fn expect(dist: &RecoveryDist, g: impl Fn(f64) -> f64) -> f64 {
    match *dist {
        RecoveryDist::Constant { value } => g(value),
        RecoveryDist::Exponential { mean } => {
            // Mass beyond 60 means is below 1e-26.
            simpson(|t| g(t) * (-t / mean).exp() / mean, 0.0, 60.0 * mean, 200_000)
        }
        RecoveryDist::Uniform { low, high } => simpson(|t| g(t) / (high - low), low, high, 20_000),
        RecoveryDist::Pareto { shape, scale } => {
            // t = scale * e^y; the dropped tail beyond e^{y_max} has mass e^{-shape y_max}.
            let y_max = 40.0 / shape;
            let body = simpson(
                |y| {
                    let t = scale * y.exp();
                    g(t) * shape * (-shape * y).exp()
                },
                0.0,
                y_max,
                200_000,
            );
            body + g(scale * y_max.exp()) * (-shape * y_max).exp()
        }
    }
}

/// `P(e_λ < T) = E[1 - e^{-λT}]`.
pub fn open_probability(dist: &RecoveryDist, lambda: f64) -> f64 {
    expect(dist, |t| 1.0 - (-lambda * t).exp())
}

/// `P(two bonds out of one site are both open) = E[(1 - e^{-λT})^2]`.
pub fn both_open_probability(dist: &RecoveryDist, lambda: f64) -> f64 {
    expect(dist, |t| (1.0 - (-lambda * t).exp()).powi(2))
}

/// Deterministic increasing events near the origin: short open paths,
/// sometimes with a second alternative clause.
pub fn fkg_pairs(dim: Dim, count: usize, seed: u64) -> Vec<(MonotoneEvent, MonotoneEvent)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Direction> = dim.directions().collect();
    let path = |rng: &mut ChaCha8Rng| -> Vec<OrientedBond> {
        let mut x = Site::origin(dim);
        if rng.random_bool(0.5) {
            x = x.step(dirs[rng.random_range(0..dirs.len())]);
        }
        (0..rng.random_range(1..=3))
            .map(|_| {
                let b = OrientedBond::from_step(x, dirs[rng.random_range(0..dirs.len())]);
                x = b.to;
                b
            })
            .collect()
    };
    let event = |rng: &mut ChaCha8Rng| {
        let clauses = (0..rng.random_range(1..=2)).map(|_| path(rng)).collect();
        MonotoneEvent::new(clauses).unwrap()
    };
    (0..count).map(|_| (event(&mut rng), event(&mut rng))).collect()
}
