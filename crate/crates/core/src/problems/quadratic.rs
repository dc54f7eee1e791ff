use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::{check_dim, BoxDomain, MooProblem};
use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::numerics::{dot, matmul_raw};
use crate::rng::SimRng;

/// Two convex quadratics `f_i(x) = 1/2 (x - c_i)^T A_i (x - c_i)`.
///
/// With `A_1 = A_2 = I` the Pareto set is the segment `[c_1, c_2]`.
/// Stochastic gradients add independent `N(0, sigma^2)` noise per entry.
#[derive(Clone, Debug)]
pub struct QuadraticPair {
    centers: [Vec<f64>; 2],
    /// `None` means identity.
    matrices: Option<[Vec<f64>; 2]>,
    noise_sigma: f64,
    domain: BoxDomain,
    lipschitz: f64,
}

fn max_eigenvalue(a: &[f64], n: usize) -> f64 {
    // symmetric PSD, so power iteration on a fixed start is enough here
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = matmul_raw(a, &v, n, n, 1);
        let nw = dot(&w, &w).sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w);
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= 1e-14 * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

impl QuadraticPair {
    /// Identity-curvature pair.
    pub fn new(c1: Vec<f64>, c2: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        if c1.is_empty() || c1.len() != c2.len() {
            return Err(Error::invalid("centers must be non-empty and of equal length"));
        }
        if !(noise_sigma >= 0.0) || c1.iter().chain(&c2).any(|v| !v.is_finite()) {
            return Err(Error::invalid("centers must be finite and noise_sigma >= 0"));
        }
        let n = c1.len();
        Ok(QuadraticPair {
            centers: [c1, c2],
            matrices: None,
            noise_sigma,
            domain: BoxDomain::cube(n, 2.0),
            lipschitz: 1.0,
        })
    }

    /// General symmetric positive definite curvature matrices (row-major `N x N`).
    pub fn with_matrices(c1: Vec<f64>, c2: Vec<f64>, a1: Vec<f64>, a2: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        let mut p = QuadraticPair::new(c1, c2, noise_sigma)?;
        let n = p.dim();
        for a in [&a1, &a2] {
            if a.len() != n * n {
                return Err(Error::shape("quadratic matrix", format!("expected {}x{} entries", n, n)));
            }
            for i in 0..n {
                for j in 0..i {
                    if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 {
                        return Err(Error::invalid("curvature matrices must be symmetric"));
                    }
                }
            }
        }
        p.lipschitz = max_eigenvalue(&a1, n).max(max_eigenvalue(&a2, n));
        p.matrices = Some([a1, a2]);
        Ok(p)
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Result<Self> {
        if domain.lower.len() != self.dim() {
            return Err(Error::shape("box", "bounds length differs from dimension"));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn centers(&self) -> &[Vec<f64>; 2] {
        &self.centers
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn residual(&self, i: usize, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.centers[i]).map(|(a, c)| a - c).collect()
    }

    fn curvature_times(&self, i: usize, r: &[f64]) -> Vec<f64> {
        match &self.matrices {
            None => r.to_vec(),
            Some(ms) => matmul_raw(&ms[i], r, r.len(), r.len(), 1),
        }
    }
}

/// Centers drawn from `U[-1, 1]^N` with identity curvature.
pub fn make_quadratic_pair(n: usize, seed: u64, noise_sigma: f64) -> Result<QuadraticPair> {
    if n == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let c1 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c2 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    QuadraticPair::new(c1, c2, noise_sigma)
}

impl MooProblem for QuadraticPair {
    fn name(&self) -> &str {
        "quadratic_pair"
    }

    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn objectives(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self, x)?;
        Ok((0..2)
            .map(|i| {
                let r = self.residual(i, x);
                0.5 * dot(&r, &self.curvature_times(i, &r))
            })
            .collect())
    }

    fn full_jacobian(&self, x: &[f64]) -> Result<GradientMatrix> {
        check_dim(self, x)?;
        let mut data = Vec::with_capacity(2 * x.len());
        for i in 0..2 {
            let r = self.residual(i, x);
            data.extend(self.curvature_times(i, &r));
        }
        GradientMatrix::new(2, x.len(), data)
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Result<GradientMatrix> {
        self.sample_gradient_mean(x, 1, rng)
    }

    /// Exact gradient plus the average of `n` independent noise draws.
    fn sample_gradient_mean(&self, x: &[f64], n: usize, rng: &mut SimRng) -> Result<GradientMatrix> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let exact = self.full_jacobian(x)?;
        if self.noise_sigma == 0.0 {
            return Ok(exact);
        }
        let mut noise = vec![0.0; exact.data().len()];
        for _ in 0..n {
            for v in noise.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += z;
            }
        }
        let scale = self.noise_sigma / n as f64;
        let data = exact.data().iter().zip(&noise).map(|(g, z)| g + scale * z).collect();
        GradientMatrix::new(2, x.len(), data)
    }

    fn domain(&self) -> Option<&BoxDomain> {
        Some(&self.domain)
    }

    fn distance_to_front(&self, x: &[f64]) -> Result<f64> {
        check_dim(self, x)?;
        if self.matrices.is_some() {
            return Err(Error::Unsupported("Pareto set is only known for identity curvature".into()));
        }
        let [c1, c2] = &self.centers;
        let seg: Vec<f64> = c2.iter().zip(c1).map(|(b, a)| b - a).collect();
        let len2 = dot(&seg, &seg);
        let rel: Vec<f64> = x.iter().zip(c1).map(|(a, c)| a - c).collect();
        let t = if len2 == 0.0 { 0.0 } else { (dot(&rel, &seg) / len2).clamp(0.0, 1.0) };
        let d: Vec<f64> = rel.iter().zip(&seg).map(|(r, s)| r - t * s).collect();
        Ok(dot(&d, &d).sqrt())
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn noise_variance(&self) -> Option<f64> {
        Some(self.dim() as f64 * self.noise_sigma * self.noise_sigma)
    }
}
