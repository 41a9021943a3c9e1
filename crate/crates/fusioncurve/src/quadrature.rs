//! Integration of smooth functions against Gaussian marker laws.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::nuisance::MarkerLaw;
use crate::rng::stream_rng;

/// Gauss-Hermite rule for the weight `exp(-z^2)` via the Golub-Welsch
/// eigenproblem. Weights sum to sqrt(pi).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Standard-normal nodes and probability weights used to integrate over a
/// marker law: a Gauss-Hermite rule for a scalar marker, common seeded
/// Monte-Carlo draws for a vector marker.
#[derive(Debug, Clone)]
pub struct MarkerRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl MarkerRule {
    pub fn hermite(n: usize) -> Self {
        let (z, w) = gauss_hermite(n);
        let nodes = z.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v / std::f64::consts::PI.sqrt()).collect();
        MarkerRule { dim: 1, nodes, weights }
    }

    pub fn monte_carlo(dim: usize, draws: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, u64::MAX);
        let nodes = (0..draws * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        MarkerRule { dim, nodes, weights: vec![1.0 / draws as f64; draws] }
    }

    /// Hermite for scalar markers, Monte Carlo otherwise.
    pub fn for_markers(dim: usize, hermite_nodes: usize, mc_draws: usize, seed: u64) -> Self {
        if dim == 1 {
            MarkerRule::hermite(hermite_nodes)
        } else {
            MarkerRule::monte_carlo(dim, mc_draws, seed)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// (marker value, weight) pairs for a given law.
    pub fn points<'a>(&'a self, law: &'a MarkerLaw) -> impl Iterator<Item = (Vec<f64>, f64)> + 'a {
        assert_eq!(law.mean.len(), self.dim, "marker rule dimension mismatch");
        self.nodes.chunks(self.dim).zip(&self.weights).map(move |(z, &w)| {
            let s = z.iter().zip(&law.mean).zip(&law.sd).map(|((z, m), sd)| m + sd * z).collect();
            (s, w)
        })
    }
}
