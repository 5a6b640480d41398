//! Generators for the six toy 2-D problems, exact mixture log-likelihood
//! oracles for the Gaussian-mixture problems, and CSV serialization.
//!
//! Geometry constants:
//! - grid-gmm: 5x5 isotropic Gaussians, means on {-4,-2,0,2,4}^2, sigma 0.1
//! - ring-gmm: 8 isotropic Gaussians on a radius-3 circle, sigma 0.1
//! - two-moons: arcs (cos t, sin t) and (1 - cos t, 0.5 - sin t), t in
//!   [0, pi], noise 0.05
//! - two-circles: radii 1.0 and 0.5, noise 0.05
//! - spiral: u ~ U(0,1), t = 3 pi sqrt(u), point (t cos t, t sin t)/(3 pi),
//!   noise 0.01
//! - many-moons: 6 unit arcs, centers on a radius-3 ring, arc j rotated by
//!   2 pi j / 6, noise 0.05

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::Error;

const LN_2PI: f64 = 1.8378770664093453;

/// The six toy problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Problem {
    GridGmm,
    RingGmm,
    TwoMoons,
    TwoCircles,
    Spiral,
    ManyMoons,
}

pub const ALL_PROBLEMS: [Problem; 6] = [
    Problem::GridGmm,
    Problem::RingGmm,
    Problem::TwoMoons,
    Problem::TwoCircles,
    Problem::Spiral,
    Problem::ManyMoons,
];

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::GridGmm => "grid-gmm",
            Problem::RingGmm => "ring-gmm",
            Problem::TwoMoons => "two-moons",
            Problem::TwoCircles => "two-circles",
            Problem::Spiral => "spiral",
            Problem::ManyMoons => "many-moons",
        }
    }

    /// Default noise scale of the problem's generator.
    pub fn default_noise(self) -> f64 {
        match self {
            Problem::GridGmm | Problem::RingGmm => 0.1,
            Problem::TwoMoons | Problem::TwoCircles | Problem::ManyMoons => 0.05,
            Problem::Spiral => 0.01,
        }
    }

    /// Number of discrete components the generator mixes over.
    pub fn component_count(self) -> usize {
        match self {
            Problem::GridGmm => 25,
            Problem::RingGmm => 8,
            Problem::TwoMoons => 2,
            Problem::TwoCircles => 2,
            Problem::Spiral => 1,
            Problem::ManyMoons => 6,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "grid-gmm" => Ok(Problem::GridGmm),
            "ring-gmm" => Ok(Problem::RingGmm),
            "two-moons" => Ok(Problem::TwoMoons),
            "two-circles" => Ok(Problem::TwoCircles),
            "spiral" => Ok(Problem::Spiral),
            "many-moons" => Ok(Problem::ManyMoons),
            other => Err(Error::Config(format!(
                "unknown problem '{other}' (expected one of grid-gmm, ring-gmm, two-moons, two-circles, spiral, many-moons)"
            ))),
        }
    }
}

/// Fully determined generation request: problem, size, seed, and an
/// optional noise override.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub problem: Problem,
    pub n: usize,
    pub seed: u64,
    pub noise: Option<f64>,
}

impl DatasetSpec {
    pub fn new(problem: Problem, n: usize, seed: u64) -> Self {
        DatasetSpec {
            problem,
            n,
            seed,
            noise: None,
        }
    }

    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or_else(|| self.problem.default_noise())
    }
}

/// Generated points with their mixture-component labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<[f64; 2]>,
    pub labels: Option<Vec<usize>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Mean of grid-gmm component `j` (row-major over the 5x5 grid).
pub fn grid_mean(j: usize) -> [f64; 2] {
    assert!(j < 25);
    let vals = [-4.0, -2.0, 0.0, 2.0, 4.0];
    [vals[j / 5], vals[j % 5]]
}

/// Mean of ring-gmm component `j` on the radius-3 circle.
pub fn ring_mean(j: usize) -> [f64; 2] {
    assert!(j < 8);
    let a = std::f64::consts::TAU * j as f64 / 8.0;
    [3.0 * a.cos(), 3.0 * a.sin()]
}

/// Noise-free point of moon `m` at arc parameter `t` in `[0, pi]`.
pub fn two_moons_point(m: usize, t: f64) -> [f64; 2] {
    match m {
        0 => [t.cos(), t.sin()],
        1 => [1.0 - t.cos(), 0.5 - t.sin()],
        _ => panic!("two-moons has two components"),
    }
}

/// Noise-free point of circle `m` (radius 1.0 or 0.5) at angle `t`.
pub fn two_circles_point(m: usize, t: f64) -> [f64; 2] {
    let r = match m {
        0 => 1.0,
        1 => 0.5,
        _ => panic!("two-circles has two components"),
    };
    [r * t.cos(), r * t.sin()]
}

/// Noise-free spiral point for `u` in `[0, 1)`.
pub fn spiral_point(u: f64) -> [f64; 2] {
    let t = 3.0 * std::f64::consts::PI * u.sqrt();
    let s = 3.0 * std::f64::consts::PI;
    [t * t.cos() / s, t * t.sin() / s]
}

/// Noise-free point of many-moons arc `m` at arc parameter `t` in `[0, pi]`:
/// a unit half-arc centered on the radius-3 ring, rotated with its position.
pub fn many_moons_point(m: usize, t: f64) -> [f64; 2] {
    assert!(m < 6);
    let phi = std::f64::consts::TAU * m as f64 / 6.0;
    let c = [3.0 * phi.cos(), 3.0 * phi.sin()];
    [c[0] + (t + phi).cos(), c[1] + (t + phi).sin()]
}

/// Deterministic pseudo-random batch for the spec. Identical specs give
/// identical batches.
pub fn generate(spec: &DatasetSpec) -> SampleBatch {
    assert!(spec.n > 0, "dataset size must be positive");
    let noise = spec.noise();
    assert!(noise >= 0.0, "noise scale must be non-negative");
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (mut p, label) = match spec.problem {
            Problem::GridGmm => {
                let j = rng.gen_range(0..25);
                (grid_mean(j), j)
            }
            Problem::RingGmm => {
                let j = rng.gen_range(0..8);
                (ring_mean(j), j)
            }
            Problem::TwoMoons => {
                let m = rng.gen_range(0..2);
                let t = rng.gen_range(0.0..std::f64::consts::PI);
                (two_moons_point(m, t), m)
            }
            Problem::TwoCircles => {
                let m = rng.gen_range(0..2);
                let t = rng.gen_range(0.0..std::f64::consts::TAU);
                (two_circles_point(m, t), m)
            }
            Problem::Spiral => {
                let u: f64 = rng.gen();
                (spiral_point(u), 0)
            }
            Problem::ManyMoons => {
                let m = rng.gen_range(0..6);
                let t = rng.gen_range(0.0..std::f64::consts::PI);
                (many_moons_point(m, t), m)
            }
        };
        if noise > 0.0 {
            p[0] += noise * rng.sample::<f64, _>(StandardNormal);
            p[1] += noise * rng.sample::<f64, _>(StandardNormal);
        }
        points.push(p);
        labels.push(label);
    }
    SampleBatch {
        points,
        labels: Some(labels),
    }
}

/// Exact log-density of one point under an isotropic uniform-weight
/// Gaussian mixture.
fn gmm_log_density(means: &[[f64; 2]], sigma: f64, x: &[f64; 2]) -> f64 {
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let log_norm = -(means.len() as f64).ln() - LN_2PI - 2.0 * sigma.ln();
    let mut max = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(means.len());
    for m in means {
        let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
        let t = -d2 * inv2s2;
        max = max.max(t);
        terms.push(t);
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    log_norm + max + sum.ln()
}

/// Mean exact log-likelihood of `points` under the problem's true
/// distribution, where one is available in closed form (the Gaussian
/// mixtures). Returns `None` for manifold-plus-noise problems.
pub fn true_log_likelihood(problem: Problem, points: &[[f64; 2]]) -> Option<f64> {
    let (means, sigma): (Vec<[f64; 2]>, f64) = match problem {
        Problem::GridGmm => ((0..25).map(grid_mean).collect(), 0.1),
        Problem::RingGmm => ((0..8).map(ring_mean).collect(), 0.1),
        _ => return None,
    };
    let total: f64 = points
        .iter()
        .map(|p| gmm_log_density(&means, sigma, p))
        .sum();
    Some(total / points.len() as f64)
}

/// Writes headerless `x,y` rows. Floats print in shortest round-trip form,
/// so `load_csv(save_csv(b)) == b` bit for bit.
pub fn save_csv(batch: &SampleBatch, path: &Path) -> Result<(), Error> {
    let mut out = String::with_capacity(batch.points.len() * 16);
    for p in &batch.points {
        out.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses headerless `x,y` rows. Labels are not stored in CSV.
pub fn load_csv(path: &Path) -> Result<SampleBatch, Error> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

/// CSV parsing from a string; malformed rows report their 1-based line.
pub fn parse_csv(text: &str) -> Result<SampleBatch, Error> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected two comma-separated fields, got '{line}'"),
            });
        };
        let x: f64 = a.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad float '{a}'"),
        })?;
        let y: f64 = b.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad float '{b}'"),
        })?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "non-finite coordinate".to_string(),
            });
        }
        points.push([x, y]);
    }
    Ok(SampleBatch {
        points,
        labels: None,
    })
}
