//! Initial condition `ψ(h)` of the limit equation: the free energy of the
//! enriched model at `t = 0`, which does not depend on `N`.
//!
//! For a finite-support prior with atoms `ξ_j` and weights `p_j`,
//!
//! ```text
//! ψ(h) = E_{x̄,z} log Σ_j p_j exp( z·(ξ_j √h) + ξ_j h x̄ᵀ − ½ ξ_j h ξ_jᵀ )
//! ```
//!
//! with `x̄ ~ P` summed exactly and `z ~ N(0, I_K)` integrated by a tensor
//! Gauss–Hermite rule.

use crate::error::{invalid, Error, Result};
use crate::quadrature::TensorHermite;
use crate::symcone::{sqrt_psd, SymMat, PSD_TOL};

pub const DEFAULT_QUAD_ORDER: usize = 32;
pub const MIN_QUAD_ORDER: usize = 8;

/// Finite-support law of one row of the signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Prior {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("prior needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].len();
        if dim == 0 {
            return Err(invalid("atoms must have positive dimension"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != dim {
                return Err(invalid(format!("atom {i} has dimension {}, expected {dim}", a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("atom {i} has a non-finite coordinate")));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("prior weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("prior weights must sum to 1 (within 1e-12), got {total}")));
        }
        Ok(Self { dim, atoms, weights })
    }

    /// Atoms ±1 with probability ½ each, K = 1.
    pub fn rademacher() -> Self {
        Self::new(vec![vec![1.0], vec![-1.0]], vec![0.5, 0.5]).expect("valid prior")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `max_j |ξ_j|`.
    pub fn support_bound(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for (mk, ak) in m.iter_mut().zip(a) {
                *mk += w * ak;
            }
        }
        m
    }

    /// The same law with every atom multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            atoms: self.atoms.iter().map(|a| a.iter().map(|v| c * v).collect()).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// An initial condition on S^K₊ usable by the Hopf–Lax solver.
pub trait InitialCondition: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, h: &SymMat) -> Result<f64>;

    /// Central differences along an orthonormal basis, one-sided where the
    /// backward point would leave the cone.
    fn gradient(&self, h: &SymMat) -> Result<SymMat> {
        let eps = 1e-6 * (1.0 + h.norm());
        let f0 = self.value(h)?;
        let mut coords = Vec::new();
        for e in SymMat::basis(h.dim()) {
            let fp = self.value(&h.axpy(eps, &e))?;
            let back = h.axpy(-eps, &e);
            let g = if back.is_psd() {
                (fp - self.value(&back)?) / (2.0 * eps)
            } else {
                (fp - f0) / eps
            };
            coords.push(g);
        }
        SymMat::from_coords(h.dim(), &coords)
    }

    fn value_and_gradient(&self, h: &SymMat) -> Result<(f64, SymMat)> {
        Ok((self.value(h)?, self.gradient(h)?))
    }

    /// Upper bound on `|∇ψ|` over the cone.
    fn lipschitz(&self) -> f64;
}

/// `ψ(h)` for a finite-support prior, with a precomputed quadrature rule.
#[derive(Clone, Debug)]
pub struct PriorPsi {
    prior: Prior,
    rule: TensorHermite,
    support: Vec<usize>,
    log_weights: Vec<f64>,
}

impl PriorPsi {
    pub fn new(prior: Prior, quad_order: usize) -> Result<Self> {
        if quad_order < MIN_QUAD_ORDER {
            return Err(invalid(format!(
                "quadrature order must be at least {MIN_QUAD_ORDER}, got {quad_order}"
            )));
        }
        let rule = TensorHermite::new(prior.dim(), quad_order);
        let support: Vec<usize> = (0..prior.len()).filter(|&j| prior.weights[j] > 0.0).collect();
        let log_weights = prior.weights.iter().map(|w| w.ln()).collect();
        Ok(Self { prior, rule, support, log_weights })
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn quad_order(&self) -> usize {
        let n = self.rule.len() as f64;
        n.powf(1.0 / self.prior.dim() as f64).round() as usize
    }

    fn check(&self, h: &SymMat) -> Result<SymMat> {
        if h.dim() != self.prior.dim() {
            return Err(Error::DimensionMismatch { expected: self.prior.dim(), found: h.dim() });
        }
        let s = sqrt_psd(h)?;
        Ok(s)
    }

    /// One pass over `(x̄, z)`; the gradient `½ E[⟨x⟩ᵀ⟨x⟩]` is accumulated when asked.
    fn evaluate(&self, h: &SymMat, want_grad: bool) -> Result<(f64, Option<SymMat>)> {
        let sqrt_h = self.check(h)?;
        let k = self.prior.dim();
        let atoms = &self.prior.atoms;
        let sup = &self.support;

        let quad = |a: &[f64], m: &SymMat, b: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    s += a[i] * m.get(i, j) * b[j];
                }
            }
            s
        };
        // s_j = ξ_j √h
        let shifted: Vec<Vec<f64>> = sup
            .iter()
            .map(|&j| (0..k).map(|c| (0..k).map(|r| atoms[j][r] * sqrt_h.get(r, c)).sum()).collect())
            .collect();
        let self_term: Vec<f64> = sup.iter().map(|&j| 0.5 * quad(&atoms[j], h, &atoms[j])).collect();

        let mut value = 0.0;
        let mut grad = vec![0.0; k * k];
        let mut v = vec![0.0; sup.len()];
        let mut mean = vec![0.0; k];
        for &b in sup {
            let xbar = &atoms[b];
            let base: Vec<f64> = sup
                .iter()
                .enumerate()
                .map(|(jj, &j)| quad(&atoms[j], h, xbar) - self_term[jj] + self.log_weights[j])
                .collect();
            let mut acc_v = 0.0;
            let mut acc_g = vec![0.0; k * k];
            for node in 0..self.rule.len() {
                let z = self.rule.node(node);
                let mut vmax = f64::NEG_INFINITY;
                for jj in 0..sup.len() {
                    let zs: f64 = z.iter().zip(&shifted[jj]).map(|(a, b)| a * b).sum();
                    v[jj] = zs + base[jj];
                    vmax = vmax.max(v[jj]);
                }
                let mut sum = 0.0;
                for vj in v.iter_mut() {
                    *vj = (*vj - vmax).exp();
                    sum += *vj;
                }
                let w = self.rule.weights[node];
                acc_v += w * (vmax + sum.ln());
                if want_grad {
                    mean.iter_mut().for_each(|m| *m = 0.0);
                    for (jj, &j) in sup.iter().enumerate() {
                        let pj = v[jj] / sum;
                        for c in 0..k {
                            mean[c] += pj * atoms[j][c];
                        }
                    }
                    for r in 0..k {
                        for c in 0..k {
                            acc_g[r * k + c] += w * mean[r] * mean[c];
                        }
                    }
                }
            }
            let pb = self.prior.weights[b];
            value += pb * acc_v;
            for (g, a) in grad.iter_mut().zip(&acc_g) {
                *g += pb * a;
            }
        }
        let g = want_grad.then(|| SymMat::from_fn(k, |r, c| 0.5 * 0.5 * (grad[r * k + c] + grad[c * k + r])));
        Ok((value, g))
    }
}

impl InitialCondition for PriorPsi {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn value(&self, h: &SymMat) -> Result<f64> {
        Ok(self.evaluate(h, false)?.0)
    }

    fn gradient(&self, h: &SymMat) -> Result<SymMat> {
        Ok(self.evaluate(h, true)?.1.expect("gradient requested"))
    }

    fn value_and_gradient(&self, h: &SymMat) -> Result<(f64, SymMat)> {
        let (v, g) = self.evaluate(h, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn lipschitz(&self) -> f64 {
        psi_lipschitz(&self.prior)
    }
}

/// `ψ(h) = c·h`, whose Hopf–Lax evolution is `c·h + 2t|c|²` for `H = 2|p|²`.
#[derive(Clone, Debug)]
pub struct LinearPsi {
    pub slope: SymMat,
}

impl LinearPsi {
    pub fn new(slope: SymMat) -> Self {
        Self { slope }
    }
}

impl InitialCondition for LinearPsi {
    fn dim(&self) -> usize {
        self.slope.dim()
    }

    fn value(&self, h: &SymMat) -> Result<f64> {
        if h.min_eigenvalue()? < -PSD_TOL {
            return Err(Error::NotPsd { min_eigenvalue: h.min_eigenvalue()? });
        }
        Ok(self.slope.dot(h))
    }

    fn gradient(&self, _h: &SymMat) -> Result<SymMat> {
        Ok(self.slope.clone())
    }

    fn lipschitz(&self) -> f64 {
        self.slope.norm()
    }
}

/// Initial condition backed by a closure; the gradient falls back to finite differences.
pub struct FnInitialCondition<F> {
    dim: usize,
    lipschitz: f64,
    f: F,
}

impl<F> FnInitialCondition<F>
where
    F: Fn(&SymMat) -> Result<f64> + Send + Sync,
{
    pub fn new(dim: usize, lipschitz: f64, f: F) -> Self {
        Self { dim, lipschitz, f }
    }
}

impl<F> InitialCondition for FnInitialCondition<F>
where
    F: Fn(&SymMat) -> Result<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, h: &SymMat) -> Result<f64> {
        (self.f)(h)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// `ψ(h)` with a fresh quadrature rule of the given order.
pub fn psi(h: &SymMat, prior: &Prior, quad_order: usize) -> Result<f64> {
    PriorPsi::new(prior.clone(), quad_order)?.value(h)
}

/// `∇ψ(h) = ½ E[⟨x⟩ᵀ⟨x⟩]`.
pub fn psi_grad(h: &SymMat, prior: &Prior, quad_order: usize) -> Result<SymMat> {
    PriorPsi::new(prior.clone(), quad_order)?.gradient(h)
}

/// `½ max_j |ξ_j|²`, a bound on `|∇ψ|` since `|⟨x⟩| ≤ max_j |ξ_j|`.
pub fn psi_lipschitz(prior: &Prior) -> f64 {
    0.5 * prior.support_bound().powi(2)
}
