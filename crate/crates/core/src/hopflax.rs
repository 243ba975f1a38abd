//! Hopf–Lax evaluation of the weak solution of `∂ₜf = H(∇f)` on `R₊ × S^K₊`:
//!
//! ```text
//! f(t, h) = sup_{h' ⪰ 0} ψ(h + h') − t H*(h'/t)
//! ```
//!
//! For an `L`-Lipschitz `ψ` and `H = 2|p|²`, the increment `h'` can be
//! restricted to `|h'| ≤ 8tL`: beyond that radius `|h'|²/(8t) > L|h'|`, so the
//! objective is below its value at `h' = 0`. The supremum is found by
//! multistart projected gradient ascent.

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::initcond::InitialCondition;
use crate::nonlinearity::{project_cone_ball, random_psd_in_ball, Nonlinearity, Quadratic};
use crate::rng::StreamRng;
use crate::symcone::{psd_part, SymMat};

/// How the search variable is parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parameterization {
    /// Increments `h' ⪰ 0` added to `h`.
    Shifted,
    /// Points `h' ⪰ 0` of the cone, penalized through `H*((h' − h)/t)`.
    Unshifted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HopfLaxOptions {
    pub tolerance: f64,
    pub multistarts: usize,
    pub max_iterations: usize,
    pub min_step: f64,
    pub seed: u64,
    pub parameterization: Parameterization,
    pub exec: Exec,
}

impl Default for HopfLaxOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            multistarts: 16,
            max_iterations: 500,
            min_step: 1e-8,
            seed: 0x4f4c,
            parameterization: Parameterization::Shifted,
            exec: Exec::default(),
        }
    }
}

impl HopfLaxOptions {
    fn validate(&self) -> Result<()> {
        if self.multistarts == 0 {
            return Err(invalid("multistarts must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        if !(self.tolerance > 0.0) || !(self.min_step > 0.0) {
            return Err(invalid("tolerance and min_step must be positive"));
        }
        Ok(())
    }
}

/// Value and maximizing increment at one `(t, h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HLResult {
    pub value: f64,
    /// The increment `h'*` (shifted form), whichever parameterization was searched.
    pub maximizer: SymMat,
    pub starts_used: usize,
    /// Accepted and rejected ascent steps summed over all starts.
    pub ascent_iterations: usize,
    /// Objective gain of the last accepted step of the winning start.
    pub improvement_last: f64,
}

struct StartOutcome {
    value: f64,
    increment: SymMat,
    iterations: usize,
    improvement_last: f64,
}

/// `f(t, h)` for `H = 2|p|²`.
pub fn solve(
    t: f64,
    h: &SymMat,
    psi: &dyn InitialCondition,
    lipschitz: f64,
    opts: &HopfLaxOptions,
) -> Result<HLResult> {
    solve_with(&Quadratic::default(), t, h, psi, lipschitz, opts)
}

/// `f(t, h)` for a user-supplied nonlinearity.
pub fn solve_with(
    nl: &dyn Nonlinearity,
    t: f64,
    h: &SymMat,
    psi: &dyn InitialCondition,
    lipschitz: f64,
    opts: &HopfLaxOptions,
) -> Result<HLResult> {
    opts.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("time must be finite and nonnegative, got {t}")));
    }
    if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
        return Err(invalid(format!("Lipschitz constant must be finite and nonnegative, got {lipschitz}")));
    }
    if h.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { expected: psi.dim(), found: h.dim() });
    }
    let min_eig = h.min_eigenvalue()?;
    if min_eig < -crate::symcone::PSD_TOL {
        return Err(invalid(format!("h must be PSD, smallest eigenvalue {min_eig}")));
    }
    let k = h.dim();
    if t == 0.0 {
        return Ok(HLResult {
            value: psi.value(h)?,
            maximizer: SymMat::zeros(k),
            starts_used: 0,
            ascent_iterations: 0,
            improvement_last: 0.0,
        });
    }
    let radius = nl.hopf_lax_radius(t, lipschitz);
    let problem = Problem { nl, t, h, psi, radius, opts };

    let g0 = psi.gradient(h)?;
    let guided = project_cone_ball(&nl.gradient(&g0).scale(t), radius);

    let outcomes = opts.exec.try_map(opts.multistarts, |i| {
        let start = match i {
            0 => SymMat::zeros(k),
            1 => guided.clone(),
            _ => {
                let mut rng = StreamRng::new(opts.seed, i as u64);
                random_psd_in_ball(k, radius, &mut rng)
            }
        };
        problem.ascend(start)
    })?;

    // best value, then smallest |h'|, then lowest start index
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate().skip(1) {
        let b = &outcomes[best];
        let better = o.value > b.value || (o.value == b.value && o.increment.norm() < b.increment.norm());
        if better {
            best = i;
        }
    }
    let total_iterations = outcomes.iter().map(|o| o.iterations).sum();
    let win = &outcomes[best];
    Ok(HLResult {
        value: win.value,
        maximizer: win.increment.clone(),
        starts_used: outcomes.len(),
        ascent_iterations: total_iterations,
        improvement_last: win.improvement_last,
    })
}

struct Problem<'a> {
    nl: &'a dyn Nonlinearity,
    t: f64,
    h: &'a SymMat,
    psi: &'a dyn InitialCondition,
    radius: f64,
    opts: &'a HopfLaxOptions,
}

impl Problem<'_> {
    /// Objective and gradient at the search variable `x`.
    fn eval(&self, x: &SymMat, want_grad: bool) -> Result<(f64, Option<SymMat>)> {
        let (point, incr) = match self.opts.parameterization {
            Parameterization::Shifted => (self.h + x, x.clone()),
            Parameterization::Unshifted => (x.clone(), x - self.h),
        };
        let q = incr.scale(1.0 / self.t);
        let penalty = self.t * self.nl.dual(&q);
        if want_grad {
            let (v, g) = self.psi.value_and_gradient(&point)?;
            Ok((v - penalty, Some(&g - &self.nl.dual_gradient(&q))))
        } else {
            Ok((self.psi.value(&point)? - penalty, None))
        }
    }

    fn project(&self, x: &SymMat) -> SymMat {
        match self.opts.parameterization {
            Parameterization::Shifted => project_cone_ball(x, self.radius),
            Parameterization::Unshifted => {
                // psd_part, then pull back towards h (a convex combination of PSD points)
                let p = psd_part(x);
                let d = &p - self.h;
                let n = d.norm();
                if n > self.radius {
                    self.h.axpy(self.radius / n, &d)
                } else {
                    p
                }
            }
        }
    }

    fn ascend(&self, start: SymMat) -> Result<StartOutcome> {
        let mut x = match self.opts.parameterization {
            Parameterization::Shifted => self.project(&start),
            Parameterization::Unshifted => self.project(&(self.h + &start)),
        };
        let (mut v, g) = self.eval(&x, true)?;
        let mut g = g.expect("gradient requested");
        let mut step = self.nl.ascent_step(self.t);
        let mut improvement_last = 0.0;
        let mut iterations = 0;
        while iterations < self.opts.max_iterations && step >= self.opts.min_step {
            iterations += 1;
            let cand = self.project(&x.axpy(step, &g));
            if (&cand - &x).norm() <= 1e-13 * (1.0 + x.norm()) {
                break;
            }
            let (vc, _) = self.eval(&cand, false)?;
            if vc > v {
                improvement_last = vc - v;
                let (_, gc) = self.eval(&cand, true)?;
                x = cand;
                v = vc;
                g = gc.expect("gradient requested");
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        let increment = match self.opts.parameterization {
            Parameterization::Shifted => x,
            Parameterization::Unshifted => psd_part(&(&x - self.h)),
        };
        Ok(StartOutcome { value: v, increment, iterations, improvement_last })
    }
}

/// `f(t, ·)` packaged as an initial condition, so the solver can be restarted from it.
/// The gradient is `∇ψ(h + h'*)` by the envelope theorem.
pub struct Evolved<'a> {
    pub nl: &'a dyn Nonlinearity,
    pub psi: &'a dyn InitialCondition,
    pub lipschitz: f64,
    pub t: f64,
    pub opts: HopfLaxOptions,
}

impl Evolved<'_> {
    fn solve(&self, h: &SymMat) -> Result<HLResult> {
        solve_with(self.nl, self.t, h, self.psi, self.lipschitz, &self.opts)
    }
}

impl InitialCondition for Evolved<'_> {
    fn dim(&self) -> usize {
        self.psi.dim()
    }

    fn value(&self, h: &SymMat) -> Result<f64> {
        Ok(self.solve(h)?.value)
    }

    fn gradient(&self, h: &SymMat) -> Result<SymMat> {
        Ok(self.value_and_gradient(h)?.1)
    }

    fn value_and_gradient(&self, h: &SymMat) -> Result<(f64, SymMat)> {
        let r = self.solve(h)?;
        Ok((r.value, self.psi.gradient(&(h + &r.maximizer))?))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// `|f(t+s, h) − sup_{h'} (f(t, h + h') − s H*(h'/s))|`, the inner `f(t, ·)`
/// evaluated by [`solve`].
pub fn dp_check(
    t: f64,
    s: f64,
    h: &SymMat,
    psi: &dyn InitialCondition,
    lipschitz: f64,
    opts: &HopfLaxOptions,
) -> Result<f64> {
    if !(t > 0.0) || !(s > 0.0) {
        return Err(invalid(format!("dp_check needs t > 0 and s > 0, got t={t}, s={s}")));
    }
    let nl = Quadratic::default();
    let direct = solve(t + s, h, psi, lipschitz, opts)?.value;
    let inner = Evolved { nl: &nl, psi, lipschitz, t, opts: opts.clone() };
    let staged = solve(s, h, &inner, lipschitz, opts)?.value;
    Ok((direct - staged).abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub value: f64,
    /// True when part of the stencil had to be shifted to stay inside the cone.
    pub one_sided: bool,
}

/// `|∂ₜf − 2|∇f|²|` by central differences at step `eps`.
pub fn residual(
    t: f64,
    h: &SymMat,
    psi: &dyn InitialCondition,
    lipschitz: f64,
    eps: f64,
    opts: &HopfLaxOptions,
) -> Result<Residual> {
    let f = |tt: f64, hh: &SymMat| solve(tt, hh, psi, lipschitz, opts).map(|r| r.value);
    residual_of(&f, t, h, eps)
}

/// The same stencil for any candidate `f(t, h)`.
pub fn residual_of(
    f: &dyn Fn(f64, &SymMat) -> Result<f64>,
    t: f64,
    h: &SymMat,
    eps: f64,
) -> Result<Residual> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(invalid(format!("eps must lie in [1e-5, 1e-2], got {eps}")));
    }
    if !(t > 0.0) {
        return Err(invalid(format!("residual needs t > 0, got {t}")));
    }
    let mut one_sided = false;
    let f0 = f(t, h)?;
    let dt = if t - eps >= 0.0 {
        (f(t + eps, h)? - f(t - eps, h)?) / (2.0 * eps)
    } else {
        one_sided = true;
        (-3.0 * f0 + 4.0 * f(t + eps, h)? - f(t + 2.0 * eps, h)?) / (2.0 * eps)
    };
    let mut coords = Vec::new();
    for e in SymMat::basis(h.dim()) {
        let back = h.axpy(-eps, &e);
        let d = if back.is_psd() {
            (f(t, &h.axpy(eps, &e))? - f(t, &back)?) / (2.0 * eps)
        } else {
            one_sided = true;
            (-3.0 * f0 + 4.0 * f(t, &h.axpy(eps, &e))? - f(t, &h.axpy(2.0 * eps, &e))?) / (2.0 * eps)
        };
        coords.push(d);
    }
    let grad = SymMat::from_coords(h.dim(), &coords)?;
    Ok(Residual { value: (dt - 2.0 * grad.norm_sq()).abs(), one_sided })
}

/// Sampling plan for the weak-solution checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Ordered pairs `h ≤ h'` per time.
    pub n_pairs: usize,
    /// Second-difference probes per time.
    pub n_semiconvex: usize,
    /// Semiconvexity is probed on `{h ⪰ δ I}`.
    pub delta: f64,
    /// Norm scale of the sampled base points.
    pub h_scale: f64,
    /// Norm of the second-difference direction, kept below `δ/2`.
    pub probe: f64,
    pub semiconvexity_constant: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(dim: usize, times: Vec<f64>) -> Self {
        Self {
            dim,
            times,
            n_pairs: 20,
            n_semiconvex: 20,
            delta: 0.1,
            h_scale: 1.0,
            probe: 0.04,
            semiconvexity_constant: 0.0,
            tolerance: 1e-6,
            seed: 0x5c,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateReport {
    /// `max f(t,h) − f(t,h')` over sampled `h ≤ h'`; nonpositive for a monotone map.
    pub monotonicity_violation: f64,
    /// `min f(t,h+a) + f(t,h−a) − 2f(t,h) + 2C_δ|a|²` over samples.
    pub semiconvexity_slack: f64,
    pub tolerance: f64,
}

impl CandidateReport {
    pub fn monotone(&self) -> bool {
        self.monotonicity_violation <= self.tolerance
    }

    pub fn semiconvex(&self) -> bool {
        self.semiconvexity_slack >= -self.tolerance
    }

    pub fn passes(&self) -> bool {
        self.monotone() && self.semiconvex()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakSolutionReport {
    pub checks: CandidateReport,
    /// Whether `H` is known to depend on `|p|` only, which the Hopf–Lax representation needs.
    pub radial_assumption_verified: bool,
}

impl WeakSolutionReport {
    pub fn passes(&self) -> bool {
        self.checks.passes()
    }
}

fn random_psd(dim: usize, scale: f64, rng: &mut StreamRng) -> SymMat {
    random_psd_in_ball(dim, scale, rng)
}

/// Monotonicity and local semiconvexity of an arbitrary candidate `f(t, h)`.
pub fn check_candidate(
    f: &(dyn Fn(f64, &SymMat) -> Result<f64> + Sync),
    spec: &SampleSpec,
) -> Result<CandidateReport> {
    if spec.dim == 0 || spec.times.is_empty() {
        return Err(invalid("sample spec needs a dimension and at least one time"));
    }
    if spec.probe >= 0.5 * spec.delta {
        return Err(invalid("probe must be below delta/2 to stay inside the cone"));
    }
    let k = spec.dim;
    let mut violation = f64::NEG_INFINITY;
    let mut slack = f64::INFINITY;
    for (ti, &t) in spec.times.iter().enumerate() {
        let mut rng = StreamRng::new(spec.seed, ti as u64);
        for _ in 0..spec.n_pairs {
            let h = random_psd(k, spec.h_scale, &mut rng);
            let h2 = &h + &random_psd(k, spec.h_scale, &mut rng);
            violation = violation.max(f(t, &h)? - f(t, &h2)?);
        }
        for _ in 0..spec.n_semiconvex {
            let h = &SymMat::scalar(k, spec.delta) + &random_psd(k, spec.h_scale, &mut rng);
            let a = SymMat::from_fn(k, |_, _| rng.normal());
            let a = a.scale(spec.probe / a.norm());
            let d2 = f(t, &(&h + &a))? + f(t, &(&h - &a))? - 2.0 * f(t, &h)?;
            slack = slack.min(d2 + 2.0 * spec.semiconvexity_constant * a.norm_sq());
        }
    }
    Ok(CandidateReport {
        monotonicity_violation: if spec.n_pairs == 0 { 0.0 } else { violation },
        semiconvexity_slack: if spec.n_semiconvex == 0 { 0.0 } else { slack },
        tolerance: spec.tolerance,
    })
}

/// Weak-solution checks for the Hopf–Lax value built from `ψ`.
pub fn weak_solution_checks(
    psi: &dyn InitialCondition,
    lipschitz: f64,
    spec: &SampleSpec,
    opts: &HopfLaxOptions,
) -> Result<WeakSolutionReport> {
    weak_solution_checks_with(&Quadratic::default(), psi, lipschitz, spec, opts)
}

pub fn weak_solution_checks_with(
    nl: &dyn Nonlinearity,
    psi: &dyn InitialCondition,
    lipschitz: f64,
    spec: &SampleSpec,
    opts: &HopfLaxOptions,
) -> Result<WeakSolutionReport> {
    let f = |t: f64, h: &SymMat| solve_with(nl, t, h, psi, lipschitz, opts).map(|r| r.value);
    Ok(WeakSolutionReport {
        checks: check_candidate(&f, spec)?,
        radial_assumption_verified: nl.is_radial(),
    })
}

/// `(H(−p) t − p·h)₊`: Lipschitz, solves the equation almost everywhere, and is
/// not a weak solution because it decreases along the cone.
pub fn counterexample(p: &SymMat) -> impl Fn(f64, &SymMat) -> Result<f64> + Sync + '_ {
    let nl = Quadratic::default();
    move |t: f64, h: &SymMat| Ok((nl.evaluate(&-p) * t - p.dot(h)).max(0.0))
}
