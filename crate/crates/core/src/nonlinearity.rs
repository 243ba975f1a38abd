//! The Hamiltonian nonlinearity `H(p) = 2|p|²` and its convex dual over the
//! PSD cone, `H*(q) = sup_{p ⪰ 0} (p·q − H(p))`.

use crate::error::{invalid, Result};
use crate::rng::StreamRng;
use crate::symcone::{psd_part, SymMat};

/// A convex, PSD-nondecreasing nonlinearity together with its dual on S^K₊.
pub trait Nonlinearity: Send + Sync {
    fn evaluate(&self, p: &SymMat) -> f64;

    /// `sup_{p ⪰ 0} (p·q − H(p))`.
    fn dual(&self, q: &SymMat) -> f64;

    fn gradient(&self, p: &SymMat) -> SymMat;

    /// Gradient of [`Nonlinearity::dual`]. Central differences unless overridden.
    fn dual_gradient(&self, q: &SymMat) -> SymMat {
        let eps = 1e-6 * (1.0 + q.norm());
        let coords: Vec<f64> = SymMat::basis(q.dim())
            .iter()
            .map(|e| (self.dual(&q.axpy(eps, e)) - self.dual(&q.axpy(-eps, e))) / (2.0 * eps))
            .collect();
        SymMat::from_coords(q.dim(), &coords).expect("basis length")
    }

    /// Radius `R` such that, for an `L`-Lipschitz initial condition, no
    /// increment with `|h'| > R` beats `h' = 0` in `ψ(h+h') − t H*(h'/t)`.
    fn hopf_lax_radius(&self, t: f64, lipschitz: f64) -> f64;

    /// Initial ascent step for the Hopf–Lax objective at time `t`.
    fn ascent_step(&self, t: f64) -> f64 {
        t
    }

    /// True when `H(p)` depends on `|p|` only.
    fn is_radial(&self) -> bool {
        false
    }
}

/// `H(p) = c|p|²`. The default coefficient `c = 2` is the one of the limit equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic {
    pub coefficient: f64,
}

impl Default for Quadratic {
    fn default() -> Self {
        Self { coefficient: 2.0 }
    }
}

impl Nonlinearity for Quadratic {
    fn evaluate(&self, p: &SymMat) -> f64 {
        self.coefficient * p.norm_sq()
    }

    /// `|q₊|² / (4c)`: the maximiser is `q₊/(2c)`.
    fn dual(&self, q: &SymMat) -> f64 {
        psd_part(q).norm_sq() / (4.0 * self.coefficient)
    }

    fn gradient(&self, p: &SymMat) -> SymMat {
        p.scale(2.0 * self.coefficient)
    }

    fn dual_gradient(&self, q: &SymMat) -> SymMat {
        psd_part(q).scale(1.0 / (2.0 * self.coefficient))
    }

    // L|h'| ≥ |h'|²/(4ct) ⇔ |h'| ≤ 4ctL
    fn hopf_lax_radius(&self, t: f64, lipschitz: f64) -> f64 {
        4.0 * self.coefficient * t * lipschitz
    }

    fn ascent_step(&self, t: f64) -> f64 {
        2.0 * self.coefficient * t
    }

    fn is_radial(&self) -> bool {
        true
    }
}

/// `2|p|²`.
pub fn h_eval(p: &SymMat) -> f64 {
    Quadratic::default().evaluate(p)
}

/// `|q₊|²/8`.
pub fn h_dual(q: &SymMat) -> f64 {
    Quadratic::default().dual(q)
}

/// Projection onto `{p ⪰ 0, |p| ≤ radius}`.
pub(crate) fn project_cone_ball(p: &SymMat, radius: f64) -> SymMat {
    let pp = psd_part(p);
    let n = pp.norm();
    if n > radius {
        pp.scale(radius / n)
    } else {
        pp
    }
}

/// Random point of `S^K₊` with norm at most `radius`.
pub(crate) fn random_psd_in_ball(dim: usize, radius: f64, rng: &mut StreamRng) -> SymMat {
    let g = SymMat::from_fn(dim, |_, _| rng.normal());
    let p = psd_part(&g);
    let n = p.norm();
    if n == 0.0 {
        return SymMat::zeros(dim);
    }
    p.scale(radius * rng.uniform() / n)
}

/// Direct evaluation of `sup_{p ⪰ 0, |p| ≤ radius} (p·q − H(p))` by sampling
/// the cone and refining the best samples with projected gradient ascent.
/// The result is attained by a feasible point, so it never exceeds the true dual.
pub fn h_dual_numeric(q: &SymMat, nl: &dyn Nonlinearity, radius: f64, grid: usize) -> Result<f64> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    if grid == 0 {
        return Err(invalid("grid must be positive"));
    }
    let k = q.dim();
    let objective = |p: &SymMat| p.dot(q) - nl.evaluate(p);

    let mut rng = StreamRng::new(0xd0a1 ^ grid as u64, k as u64);
    let mut samples: Vec<(f64, SymMat)> = Vec::with_capacity(grid + 1);
    let origin = SymMat::zeros(k);
    samples.push((objective(&origin), origin));
    for _ in 0..grid {
        let p = random_psd_in_ball(k, radius, &mut rng);
        samples.push((objective(&p), p));
    }
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best = f64::NEG_INFINITY;
    for (v0, p0) in samples.into_iter().take(4) {
        let (mut p, mut v) = (p0, v0);
        let mut step = 1.0;
        for _ in 0..5000 {
            if step < 1e-14 {
                break;
            }
            let g = q - &nl.gradient(&p);
            let cand = project_cone_ball(&p.axpy(step, &g), radius);
            let vc = objective(&cand);
            if vc > v {
                let moved = (&cand - &p).norm();
                p = cand;
                v = vc;
                step *= 1.5;
                if moved < 1e-14 * (1.0 + p.norm()) {
                    break;
                }
            } else {
                step *= 0.5;
            }
        }
        best = best.max(v);
    }
    Ok(best)
}
