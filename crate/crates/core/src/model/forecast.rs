use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::Point;

use super::layers::PARAMS;

/// Per agent and future frame `(μx, μy, σx, σy, ρ)`, stored `[N, 5, T_pred]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDistribution {
    pub n: usize,
    pub t_pred: usize,
    pub params: Vec<f64>,
}

/// Draws `[h, N, T_pred, 2]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub h: usize,
    pub n: usize,
    pub t_pred: usize,
    pub values: Vec<f64>,
}

impl ForecastDistribution {
    pub fn new(n: usize, t_pred: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != n * PARAMS * t_pred {
            return Err(Error::Shape {
                what: "forecast parameters",
                expected: vec![n, PARAMS, t_pred],
                got: vec![params.len()],
            });
        }
        Ok(Self { n, t_pred, params })
    }

    pub fn get(&self, i: usize, c: usize, k: usize) -> f64 {
        self.params[(i * PARAMS + c) * self.t_pred + k]
    }

    pub fn mean(&self, i: usize, k: usize) -> Point {
        Point::new(self.get(i, 0, k), self.get(i, 1, k))
    }

    pub fn sigma(&self, i: usize, k: usize) -> [f64; 2] {
        [self.get(i, 2, k), self.get(i, 3, k)]
    }

    pub fn rho(&self, i: usize, k: usize) -> f64 {
        self.get(i, 4, k)
    }

    /// Mean trajectories, `[N][T_pred]`.
    pub fn means(&self) -> Vec<Vec<Point>> {
        (0..self.n)
            .map(|i| (0..self.t_pred).map(|k| self.mean(i, k)).collect())
            .collect()
    }

    /// `h` joint draws via the Cholesky factor of each point's covariance.
    /// Draws are generated draw-major, so the first `h'` draws do not depend on `h`.
    pub fn sample(&self, h: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(h * self.n * self.t_pred * 2);
        for _ in 0..h {
            for i in 0..self.n {
                for k in 0..self.t_pred {
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    let mu = self.mean(i, k);
                    let [sx, sy] = self.sigma(i, k);
                    let r = self.rho(i, k);
                    values.push(mu.x + sx * z1);
                    values.push(mu.y + sy * (r * z1 + (1.0 - r * r).sqrt() * z2));
                }
            }
        }
        Samples {
            h,
            n: self.n,
            t_pred: self.t_pred,
            values,
        }
    }
}

impl Samples {
    pub fn point(&self, d: usize, i: usize, k: usize) -> Point {
        let at = ((d * self.n + i) * self.t_pred + k) * 2;
        Point::new(self.values[at], self.values[at + 1])
    }

    /// Draw `d` as `[N][T_pred]` points.
    pub fn draw(&self, d: usize) -> Vec<Vec<Point>> {
        (0..self.n)
            .map(|i| (0..self.t_pred).map(|k| self.point(d, i, k)).collect())
            .collect()
    }

    pub fn draws(&self) -> Vec<Vec<Vec<Point>>> {
        (0..self.h).map(|d| self.draw(d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: usize, t: usize, mu: [f64; 2], sigma: [f64; 2], rho: f64) -> ForecastDistribution {
        let mut p = Vec::new();
        for _ in 0..n {
            for v in [mu[0], mu[1], sigma[0], sigma[1], rho] {
                p.extend(std::iter::repeat_n(v, t));
            }
        }
        ForecastDistribution::new(n, t, p).unwrap()
    }

    #[test]
    fn tiny_sigma_concentrates() {
        let eps = 1e-7;
        let f = constant(2, 3, [1.0, -2.0], [eps, eps], 0.5);
        let s = f.sample(200, 1);
        for d in 0..s.h {
            for i in 0..2 {
                for k in 0..3 {
                    let p = s.point(d, i, k);
                    assert!((p.x - 1.0).abs() < 6.0 * eps && (p.y + 2.0).abs() < 6.0 * eps);
                }
            }
        }
    }

    #[test]
    fn monte_carlo_mean_and_correlation() {
        let f = constant(1, 1, [0.5, -1.5], [2.0, 0.5], -0.6);
        let s = f.sample(100_000, 42);
        let m = s.values.len() / 2;
        let mx = s.values.iter().step_by(2).sum::<f64>() / m as f64;
        let my = s.values.iter().skip(1).step_by(2).sum::<f64>() / m as f64;
        assert!((mx - 0.5).abs() < 3.0 * 2.0 / (m as f64).sqrt());
        assert!((my + 1.5).abs() < 3.0 * 0.5 / (m as f64).sqrt());
        let cov = s
            .values
            .chunks(2)
            .map(|c| (c[0] - mx) * (c[1] - my))
            .sum::<f64>()
            / m as f64;
        assert!((cov / (2.0 * 0.5) + 0.6).abs() < 0.02);
    }

    #[test]
    fn seeded_and_prefix_stable() {
        let f = constant(3, 4, [0.0, 0.0], [1.0, 2.0], 0.1);
        assert_eq!(f.sample(5, 7), f.sample(5, 7));
        assert_ne!(f.sample(5, 7), f.sample(5, 8));
        let long = f.sample(9, 7);
        let short = f.sample(4, 7);
        assert_eq!(&long.values[..short.values.len()], &short.values[..]);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(ForecastDistribution::new(2, 3, vec![0.0; 29]).is_err());
    }
}
