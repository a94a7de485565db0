//! Collocation-point generation.
//!
//! The adversarial scheme maps a noise vector through a generator network
//! whose `tanh` outputs are rescaled into the domain; its spread is kept up
//! by the nearest-neighbour penalty [`entropy_penalty`]. Baseline schemes
//! draw points without looking at the solver.

mod kdtree;

pub use kdtree::{squared_distance, KdTree};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeRef, Tape};
use crate::neural::{Activation, BoundMlp, MlpConfig, NeuralError};
use crate::problems::Domain;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("neighbour count k = {k} needs 1 ≤ k ≤ n − 1 with n = {n}")]
    NeighborCount { k: usize, n: usize },
    #[error("point index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scheme '{0}'; valid: adversarial, uniform, linspace, noisy-linspace")]
    UnknownScheme(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Shape and regularization settings of the adversarial sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub z_dim: usize,
    pub n_points: usize,
    pub dim: usize,
    pub k: usize,
    pub lambda: f64,
    pub eps_dist: f64,
    pub hidden: Vec<usize>,
}

impl SamplerConfig {
    /// Defaults: `z_d = 8`, `k = 2`, `λ = 0.01`, `ε = 1e-12`, two hidden layers of 32.
    pub fn new(n_points: usize, dim: usize) -> Self {
        Self {
            z_dim: 8,
            n_points,
            dim,
            k: 2,
            lambda: 0.01,
            eps_dist: 1e-12,
            hidden: vec![32, 32],
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: String| Err(SamplingError::InvalidConfig(m));
        if self.n_points < 2 {
            return bad(format!("need at least 2 points, got {}", self.n_points));
        }
        if self.k == 0 || self.k >= self.n_points {
            return Err(SamplingError::NeighborCount {
                k: self.k,
                n: self.n_points,
            });
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.eps_dist >= 0.0) {
            return bad(format!("eps_dist must be non-negative, got {}", self.eps_dist));
        }
        if self.z_dim == 0 || self.dim == 0 || self.hidden.contains(&0) {
            return bad("dimensions must be positive".into());
        }
        Ok(())
    }

    /// `[z_d, hidden…, n·d]`, tanh throughout.
    pub fn network_config(&self) -> MlpConfig {
        let mut sizes = vec![self.z_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.n_points * self.dim);
        MlpConfig {
            layer_sizes: sizes,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineScheme {
    Uniform,
    Linspace,
    /// `sigma: None` uses half the grid spacing of each axis.
    NoisyLinspace {
        sigma: Option<f64>,
    },
}

/// Serialized by name; `noisy-linspace` then carries the default σ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Adversarial,
    Baseline(BaselineScheme),
}

impl Scheme {
    pub const NAMES: [&'static str; 4] = ["adversarial", "uniform", "linspace", "noisy-linspace"];

    pub fn is_adversarial(&self) -> bool {
        matches!(self, Scheme::Adversarial)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Adversarial => "adversarial",
            Scheme::Baseline(BaselineScheme::Uniform) => "uniform",
            Scheme::Baseline(BaselineScheme::Linspace) => "linspace",
            Scheme::Baseline(BaselineScheme::NoisyLinspace { .. }) => "noisy-linspace",
        })
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for Scheme {
    type Error = SamplingError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for Scheme {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "adversarial" => Scheme::Adversarial,
            "uniform" => Scheme::Baseline(BaselineScheme::Uniform),
            "linspace" => Scheme::Baseline(BaselineScheme::Linspace),
            "noisy-linspace" => Scheme::Baseline(BaselineScheme::NoisyLinspace { sigma: None }),
            other => return Err(SamplingError::UnknownScheme(other.to_string())),
        })
    }
}

/// One iteration's collocation points.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    /// Row-major `n × d`.
    pub points: Vec<f64>,
    pub dim: usize,
    /// Coordinate nodes, present when the batch came from the sampler.
    pub nodes: Option<Vec<NodeRef>>,
    pub scheme: Scheme,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_nodes(&self, i: usize) -> Option<&[NodeRef]> {
        self.nodes.as_ref().map(|n| &n[i * self.dim..(i + 1) * self.dim])
    }
}

/// Runs the sampler on noise `z` and rescales its tanh outputs into
/// `domain`: `x = lo + (t + 1)/2 · (hi − lo)`, clamped to the box against
/// rounding. Output `i·d + j` becomes coordinate `j` of point `i`.
pub fn sample_adversarial(
    sampler: &BoundMlp<'_>,
    tape: &mut Tape,
    z: &[f64],
    domain: &Domain,
    n_points: usize,
) -> Result<SampleBatch, SamplingError> {
    let d = domain.dim();
    let inputs: Vec<_> = z.iter().map(|&v| tape.constant(v)).collect();
    let out = sampler.forward(tape, &inputs)?;
    if out.len() != n_points * d {
        return Err(SamplingError::DimensionMismatch {
            expected: n_points * d,
            got: out.len(),
        });
    }
    let mut nodes = Vec::with_capacity(out.len());
    for (idx, &t) in out.iter().enumerate() {
        let j = idx % d;
        let (lo, hi) = (domain.lo()[j], domain.hi()[j]);
        let shifted = tape.add_const(t, 1.0);
        let scaled = tape.mul_const(shifted, 0.5 * (hi - lo));
        let x = tape.add_const(scaled, lo);
        let above = tape.max_const(x, lo);
        let flipped = tape.neg(above);
        let capped = tape.max_const(flipped, -hi);
        nodes.push(tape.neg(capped));
    }
    Ok(SampleBatch {
        points: tape.values(&nodes),
        dim: d,
        nodes: Some(nodes),
        scheme: Scheme::Adversarial,
    })
}

/// Grid side length used for `n` linspace points in `d` dimensions.
pub fn grid_side(n: usize, d: usize) -> usize {
    let mut m = (n as f64).powf(1.0 / d as f64).round() as usize;
    while m.pow(d as u32) < n {
        m += 1;
    }
    m.max(1)
}

/// Equally spaced points; for `d = 2` a row-major `m × m` grid (first
/// coordinate slowest) cut to the first `n` points when `n` is not a square.
pub fn linspace_points(n: usize, domain: &Domain) -> Vec<f64> {
    let d = domain.dim();
    let m = grid_side(n, d);
    let axes: Vec<Vec<f64>> = (0..d).map(|j| domain.axis_grid(j, m)).collect();
    let mut pts = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rem = i;
        let mut idx = vec![0; d];
        for j in (0..d).rev() {
            idx[j] = rem % m;
            rem /= m;
        }
        for j in 0..d {
            pts.push(axes[j][idx[j]]);
        }
    }
    pts
}

pub fn sample_baseline<R: Rng + ?Sized>(scheme: BaselineScheme, n: usize, domain: &Domain, rng: &mut R) -> SampleBatch {
    let d = domain.dim();
    let points = match scheme {
        BaselineScheme::Uniform => (0..n * d)
            .map(|idx| {
                let j = idx % d;
                domain.lo()[j] + rng.random::<f64>() * domain.width(j)
            })
            .collect(),
        BaselineScheme::Linspace => linspace_points(n, domain),
        BaselineScheme::NoisyLinspace { sigma } => {
            let m = grid_side(n, d);
            let mut pts = linspace_points(n, domain);
            for (idx, p) in pts.iter_mut().enumerate() {
                let j = idx % d;
                let spacing = if m > 1 {
                    domain.width(j) / (m - 1) as f64
                } else {
                    domain.width(j)
                };
                let s = sigma.unwrap_or(0.5 * spacing);
                if s > 0.0 {
                    let noise = Normal::new(0.0, s).expect("positive std").sample(rng);
                    *p = (*p + noise).clamp(domain.lo()[j], domain.hi()[j]);
                }
            }
            pts
        }
    };
    SampleBatch {
        points,
        dim: d,
        nodes: None,
        scheme: Scheme::Baseline(scheme),
    }
}

/// The spread penalty `D_k = −Σ_i Σ_{j ∈ N_k(i)} sqrt(‖x_i − x_j‖² + ε)`.
///
/// Neighbour sets `N_k(i)` come from `tree` (built on the current point
/// values) and are held fixed; only the distances are differentiated.
pub fn entropy_penalty(
    tape: &mut Tape,
    batch: &SampleBatch,
    tree: &KdTree,
    k: usize,
    eps: f64,
) -> Result<NodeRef, SamplingError> {
    let n = batch.len();
    if k == 0 || k >= n {
        return Err(SamplingError::NeighborCount { k, n });
    }
    let nodes = match &batch.nodes {
        Some(nodes) => nodes.clone(),
        None => batch.points.iter().map(|&v| tape.constant(v)).collect(),
    };
    let d = batch.dim;
    let mut dists = Vec::with_capacity(n * k);
    let mut sq = Vec::with_capacity(d);
    for i in 0..n {
        for (j, _) in tree.knn_query(i, k)? {
            sq.clear();
            for c in 0..d {
                let diff = tape.sub(nodes[i * d + c], nodes[j * d + c]);
                sq.push(tape.square(diff));
            }
            let s = tape.sum(&sq);
            let s = tape.add_const(s, eps);
            dists.push(tape.sqrt(s).expect("sum of squares plus ε is non-negative"));
        }
    }
    let total = tape.sum(&dists);
    Ok(tape.neg(total))
}

/// Plain-number `D_k`, ε = 0.
pub fn entropy_value(points: &[f64], dim: usize, k: usize) -> Result<f64, SamplingError> {
    let tree = KdTree::build(points, dim);
    let mut total = 0.0;
    for i in 0..tree.len() {
        for (_, dist) in tree.knn_query(i, k)? {
            total += dist;
        }
    }
    Ok(-total)
}

/// Mean Euclidean distance over all unordered pairs of points.
pub fn mean_pairwise_distance(points: &[f64], dim: usize) -> f64 {
    let n = points.len() / dim;
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += squared_distance(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]).sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_checks() {
        let mut c = SamplerConfig::new(10, 1);
        c.validate().unwrap();
        c.k = 10;
        assert!(matches!(c.validate(), Err(SamplingError::NeighborCount { .. })));
        c.k = 2;
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        assert!(SamplerConfig::new(1, 1).validate().is_err());
        assert_eq!(
            SamplerConfig::new(30, 2).network_config().layer_sizes,
            vec![8, 32, 32, 60]
        );
    }

    #[test]
    fn scheme_names_round_trip() {
        for name in Scheme::NAMES {
            assert_eq!(name.parse::<Scheme>().unwrap().to_string(), name);
        }
        assert!("grid".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_sampler_gives_midpoints() {
        let cfg = SamplerConfig::new(5, 2);
        let net = Mlp::zeros(cfg.network_config());
        let domain = Domain::new(vec![0.0, -2.0], vec![30.0, 4.0]).unwrap();
        let mut t = Tape::new();
        let bound = net.bind(&mut t, true);
        let b = sample_adversarial(&bound, &mut t, &[0.3; 8], &domain, 5).unwrap();
        for i in 0..5 {
            assert_eq!(b.point(i), &[15.0, 1.0]);
        }
    }

    #[test]
    fn adversarial_batch_is_deterministic_and_in_domain() {
        let cfg = SamplerConfig::new(20, 1);
        let mut net = Mlp::init(cfg.network_config(), 5);
        for p in net.params_mut() {
            *p *= 40.0;
        }
        let domain = Domain::interval(0.1, 0.7);
        let z: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let run = || {
            let mut t = Tape::new();
            let bound = net.bind(&mut t, true);
            sample_adversarial(&bound, &mut t, &z, &domain, 20).unwrap().points
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|&x| (0.1..=0.7).contains(&x)));
    }

    #[test]
    fn baseline_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dom = Domain::interval(0.0, 10.0);
        let lin = sample_baseline(BaselineScheme::Linspace, 3, &dom, &mut rng);
        assert_eq!(lin.points, vec![0.0, 5.0, 10.0]);
        let quiet = sample_baseline(BaselineScheme::NoisyLinspace { sigma: Some(0.0) }, 7, &dom, &mut rng);
        assert_eq!(quiet.points, linspace_points(7, &dom));
        let noisy = sample_baseline(BaselineScheme::NoisyLinspace { sigma: None }, 50, &dom, &mut rng);
        assert!(dom_contains_all(&dom, &noisy.points));
        let unit = Domain::interval(0.0, 1.0);
        let u = sample_baseline(BaselineScheme::Uniform, 10_000, &unit, &mut rng);
        let mean = u.points.iter().sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02);
    }

    fn dom_contains_all(dom: &Domain, pts: &[f64]) -> bool {
        pts.chunks(dom.dim()).all(|p| dom.contains(p))
    }

    #[test]
    fn square_grid_is_row_major() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let pts = linspace_points(4, &dom);
        assert_eq!(pts, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(grid_side(256, 2), 16);
        assert_eq!(grid_side(10, 2), 4);
        assert_eq!(linspace_points(10, &dom).len(), 20);
    }

    #[test]
    fn penalty_examples() {
        let mut t = Tape::new();
        let pair = SampleBatch {
            points: vec![0.0, 1.0],
            dim: 1,
            nodes: None,
            scheme: Scheme::Adversarial,
        };
        let tree = KdTree::build(&pair.points, 1);
        let d = entropy_penalty(&mut t, &pair, &tree, 1, 0.0).unwrap();
        assert_eq!(t.value(d), -2.0);
        let same = SampleBatch {
            points: vec![3.0; 12],
            dim: 2,
            nodes: None,
            scheme: Scheme::Adversarial,
        };
        let tree = KdTree::build(&same.points, 2);
        let d = entropy_penalty(&mut t, &same, &tree, 3, 0.0).unwrap();
        assert_eq!(t.value(d), 0.0);
        assert!(entropy_penalty(&mut t, &same, &tree, 6, 0.0).is_err());
        assert_eq!(entropy_value(&pair.points, 1, 1).unwrap(), -2.0);
    }

    #[test]
    fn pairwise_distance() {
        assert_eq!(mean_pairwise_distance(&[0.0, 1.0, 3.0], 1), 2.0);
        assert_eq!(mean_pairwise_distance(&[5.0], 1), 0.0);
    }
}
