//! Gauss rules: Hermite (rescaled to the standard normal) and Legendre.
//!
//! Nodes are found by Newton iteration on the three-term recurrences, started
//! from the usual asymptotic guesses.

use std::f64::consts::PI;

/// One-dimensional rule: `E[g(Z)] ≈ Σ w_i g(x_i)` for `Z ~ N(0,1)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Probabilists' rule of the given order (weights sum to one).
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = (j + 1) as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        // physicists' weight e^{-x²} → standard normal: x·√2, w/√π
        let nodes: Vec<f64> = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights: Vec<f64> = w.iter().rev().map(|v| v / PI.sqrt()).collect();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Tensor-product Gauss–Hermite rule on `R^K` for a standard Gaussian vector.
#[derive(Clone, Debug)]
pub struct TensorHermite {
    pub dim: usize,
    /// Row-major `points × dim`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TensorHermite {
    pub fn new(dim: usize, order: usize) -> Self {
        let rule = GaussHermite::new(order);
        let count = order.pow(dim as u32);
        let mut nodes = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut w = 1.0;
            for &i in &idx {
                nodes.push(rule.nodes[i]);
                w *= rule.weights[i];
            }
            weights.push(w);
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self { dim, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }
}

/// Gauss–Legendre rule on `[a, b]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize, a: f64, b: f64) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let xm = 0.5 * (b + a);
        let xl = 0.5 * (b - a);
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            nodes[i] = xm - xl * z;
            nodes[n - 1 - i] = xm + xl * z;
            weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}
