//! Disorder-averaged estimators and paired statistical tests.
//!
//! Every test draws disorders from seeds derived from one base seed, so the
//! two sides of an identity are evaluated on the same samples and their
//! difference is tested directly.

use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::finite_n::{enumerate_gibbs_with, log_partition, sample_disorder, Disorder, GibbsMoments};
use crate::hopflax::{self, HopfLaxOptions};
use crate::initcond::{InitialCondition, Prior, PriorPsi};
use crate::quadrature::GaussLegendre;
use crate::rng::derive_seed;
use crate::symcone::{Mat, SymMat};

/// Monte Carlo sample plan shared by the tests below.
#[derive(Clone, Debug, PartialEq)]
pub struct McSpec {
    pub n: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// z-score threshold for two-sided identity tests.
    pub threshold: f64,
    pub exec: Exec,
}

impl McSpec {
    pub fn new(n: usize, n_samples: usize, seed: u64) -> Self {
        Self { n, n_samples, seed, threshold: 4.0, exec: Exec::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(invalid(format!("need at least 2 samples, got {}", self.n_samples)));
        }
        if self.n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        Ok(())
    }

    /// Runs `f` on each sampled disorder; results in sample order.
    fn per_disorder<T: Send>(&self, prior: &Prior, f: impl Fn(&Disorder) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        self.validate()?;
        self.exec.try_map(self.n_samples, |i| {
            let d = sample_disorder(prior, self.n, derive_seed(self.seed, i as u64))?;
            f(&d)
        })
    }

    fn moments(&self, t: f64, h: &SymMat, prior: &Prior) -> Result<Vec<GibbsMoments>> {
        self.per_disorder(prior, |d| enumerate_gibbs_with(t, h, d, prior, Exec::Sequential))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    pub std_error: T,
    pub n_samples: usize,
    pub seed_base: u64,
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn scalar_estimate(values: &[f64], seed: u64) -> McEstimate<f64> {
    let (mean, std_error) = mean_se(values);
    McEstimate { mean, std_error, n_samples: values.len(), seed_base: seed }
}

fn sym_estimate(values: &[SymMat], seed: u64) -> McEstimate<SymMat> {
    let k = values[0].dim();
    let mut mean = SymMat::zeros(k);
    let mut se = SymMat::zeros(k);
    for i in 0..k {
        for j in i..k {
            let col: Vec<f64> = values.iter().map(|v| v.get(i, j)).collect();
            let (m, s) = mean_se(&col);
            mean.set(i, j, m);
            se.set(i, j, s);
        }
    }
    McEstimate { mean, std_error: se, n_samples: values.len(), seed_base: seed }
}

fn mat_mean(values: &[Mat]) -> Mat {
    let k = values[0].dim();
    let n = values.len() as f64;
    Mat::from_fn(k, |r, c| values.iter().map(|m| m.get(r, c)).sum::<f64>() / n)
}

/// Two-sided paired comparison of `E[lhs] = E[rhs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub lhs: McEstimate<f64>,
    pub rhs: McEstimate<f64>,
    /// Mean difference over its paired standard error.
    pub z_score: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn z_of(diff: f64, se: f64, scale: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * (1.0 + scale) {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

impl IdentityReport {
    /// Paired test on per-sample values of both sides.
    pub fn paired(lhs: &[f64], rhs: &[f64], seed: u64, threshold: f64) -> Self {
        let diff: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
        let (dm, dse) = mean_se(&diff);
        let l = scalar_estimate(lhs, seed);
        let r = scalar_estimate(rhs, seed);
        let z = z_of(dm, dse, l.mean.abs() + r.mean.abs());
        Self { lhs: l, rhs: r, z_score: z, threshold, pass: z.abs() <= threshold }
    }

    /// Test from point estimates and per-sample influence values of their difference.
    fn from_influence(lhs: McEstimate<f64>, rhs: McEstimate<f64>, influence: &[f64], threshold: f64) -> Self {
        let (_, se) = mean_se(influence);
        let z = z_of(lhs.mean - rhs.mean, se, lhs.mean.abs() + rhs.mean.abs());
        Self { lhs, rhs, z_score: z, threshold, pass: z.abs() <= threshold }
    }
}

/// One-sided check `estimate ≥ −slack · SE`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub estimate: McEstimate<f64>,
    pub slack: f64,
    pub pass: bool,
}

impl BoundReport {
    fn nonnegative(estimate: McEstimate<f64>, slack: f64) -> Self {
        let pass = estimate.mean >= -slack * estimate.std_error;
        Self { estimate, slack, pass }
    }
}

/// Estimates of `F̄_N`, `∇F̄_N` (definite `h` only) and `∂ₜF̄_N` (`t > 0` only).
#[derive(Clone, Debug, PartialEq)]
pub struct BarEstimates {
    pub free_energy: McEstimate<f64>,
    pub gradient: Option<McEstimate<SymMat>>,
    pub dt: Option<McEstimate<f64>>,
}

pub fn bar_estimates(t: f64, h: &SymMat, prior: &Prior, spec: &McSpec) -> Result<BarEstimates> {
    let definite = crate::symcone::SqrtCalculus::new(h).is_ok();
    let rows = spec.per_disorder(prior, |d| {
        let g = enumerate_gibbs_with(t, h, d, prior, Exec::Sequential)?;
        let grad = if definite { Some(g.grad_free_energy(h)?) } else { None };
        let dt = if t > 0.0 { Some(g.dt_free_energy(t)?) } else { None };
        Ok((g.free_energy(), grad, dt))
    })?;
    let f: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gradient = definite.then(|| {
        let g: Vec<SymMat> = rows.iter().map(|r| r.1.clone().expect("definite")).collect();
        sym_estimate(&g, spec.seed)
    });
    let dt = (t > 0.0).then(|| {
        let v: Vec<f64> = rows.iter().map(|r| r.2.expect("t > 0")).collect();
        scalar_estimate(&v, spec.seed)
    });
    Ok(BarEstimates { free_energy: scalar_estimate(&f, spec.seed), gradient, dt })
}

/// `E⟨a·xᵀx'⟩ = E⟨a·xᵀx̄⟩`, the replica side through `⟨x⟩ᵀ⟨x⟩`.
pub fn nishimori_test(t: f64, h: &SymMat, prior: &Prior, spec: &McSpec, a: &SymMat) -> Result<IdentityReport> {
    let m = spec.moments(t, h, prior)?;
    let lhs: Vec<f64> = m.iter().map(|g| a.dot(&g.replica_overlap())).collect();
    let rhs: Vec<f64> = m.iter().map(|g| a.dot_mat(&g.mean_overlap_signal)).collect();
    Ok(IdentityReport::paired(&lhs, &rhs, spec.seed, spec.threshold))
}

/// Gaussian integration by parts in `W` and in `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct GibpReport {
    /// `E⟨x·Wx⟩ = √(t/N) E⟨|xᵀx|² − |xᵀx̄|²⟩`.
    pub w: IdentityReport,
    /// `E⟨z·x⟩ = E⟨(x − x')√h·x⟩`.
    pub z: IdentityReport,
}

impl GibpReport {
    pub fn pass(&self) -> bool {
        self.w.pass && self.z.pass
    }
}

pub fn gibp_test(t: f64, h: &SymMat, prior: &Prior, spec: &McSpec) -> Result<GibpReport> {
    if !(t > 0.0) {
        return Err(invalid(format!("integration by parts in W needs t > 0, got {t}")));
    }
    let m = spec.moments(t, h, prior)?;
    let c = (t / spec.n as f64).sqrt();
    let lhs: Vec<f64> = m.iter().map(|g| g.mean_x_w_x).collect();
    let rhs: Vec<f64> = m.iter().map(|g| c * (g.mean_sq_self_overlap - g.mean_sq_overlap_signal)).collect();
    let w = IdentityReport::paired(&lhs, &rhs, spec.seed, spec.threshold);

    let sqrt_h = crate::symcone::sqrt_psd(h)?;
    let lhs: Vec<f64> = m.iter().map(|g| g.mean_xz.trace()).collect();
    let rhs: Vec<f64> = m
        .iter()
        .map(|g| sqrt_h.dot(&g.mean_self_overlap) - sqrt_h.dot(&g.replica_overlap()))
        .collect();
    let z = IdentityReport::paired(&lhs, &rhs, spec.seed, spec.threshold);
    Ok(GibpReport { w, z })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeReport {
    /// `∂ₜF̄_N = (1/2N²) E⟨|xᵀx̄|²⟩`.
    pub dt: IdentityReport,
    /// `e·∇F̄_N = (1/2N) E⟨e·xᵀx̄⟩` along each orthonormal basis direction `e`.
    pub gradient: Vec<IdentityReport>,
    pub gradient_estimate: McEstimate<SymMat>,
    /// Smallest eigenvalue of the gradient estimate is above `−threshold·|SE|`.
    pub gradient_psd: bool,
}

impl DerivativeReport {
    pub fn pass(&self) -> bool {
        self.dt.pass && self.gradient.iter().all(|r| r.pass) && self.gradient_psd
    }
}

pub fn derivative_identity_test(t: f64, h: &SymMat, prior: &Prior, spec: &McSpec) -> Result<DerivativeReport> {
    if !(t > 0.0) {
        return Err(invalid(format!("derivative identities need t > 0, got {t}")));
    }
    let m = spec.moments(t, h, prior)?;
    let nf = spec.n as f64;
    let dt = m.iter().map(|g| g.dt_free_energy(t)).collect::<Result<Vec<_>>>()?;
    let rhs: Vec<f64> = m.iter().map(|g| g.mean_sq_overlap_signal / (2.0 * nf * nf)).collect();
    let dt_report = IdentityReport::paired(&dt, &rhs, spec.seed, spec.threshold);

    let grads = m.iter().map(|g| g.grad_free_energy(h)).collect::<Result<Vec<_>>>()?;
    let gradient = SymMat::basis(h.dim())
        .iter()
        .map(|e| {
            let l: Vec<f64> = grads.iter().map(|g| e.dot(g)).collect();
            let r: Vec<f64> = m.iter().map(|g| e.dot_mat(&g.mean_overlap_signal) / (2.0 * nf)).collect();
            IdentityReport::paired(&l, &r, spec.seed, spec.threshold)
        })
        .collect();
    let est = sym_estimate(&grads, spec.seed);
    let gradient_psd = est.mean.min_eigenvalue()? >= -spec.threshold * est.std_error.norm();
    Ok(DerivativeReport { dt: dt_report, gradient, gradient_estimate: est, gradient_psd })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HjResidualReport {
    /// `∂ₜF̄_N − 2|∇F̄_N|²` against `(1/2N²) E⟨|xᵀx̄ − E⟨xᵀx̄⟩|²⟩`.
    pub identity: IdentityReport,
    /// The left side is nonnegative within 3 standard errors.
    pub lower_bound: BoundReport,
}

impl HjResidualReport {
    pub fn pass(&self) -> bool {
        self.identity.pass && self.lower_bound.pass
    }
}

/// Both sides are smooth functions of sample means; standard errors use the delta method.
pub fn hj_residual_test(t: f64, h: &SymMat, prior: &Prior, spec: &McSpec) -> Result<HjResidualReport> {
    if !(t > 0.0) {
        return Err(invalid(format!("the residual identity needs t > 0, got {t}")));
    }
    let m = spec.moments(t, h, prior)?;
    let nf = spec.n as f64;
    let c = 1.0 / (2.0 * nf * nf);
    let dt = m.iter().map(|g| g.dt_free_energy(t)).collect::<Result<Vec<_>>>()?;
    let grads = m.iter().map(|g| g.grad_free_energy(h)).collect::<Result<Vec<_>>>()?;
    let m2: Vec<f64> = m.iter().map(|g| g.mean_sq_overlap_signal).collect();
    let ms: Vec<Mat> = m.iter().map(|g| g.mean_overlap_signal.clone()).collect();

    let (dt_bar, _) = mean_se(&dt);
    let g_bar = sym_estimate(&grads, spec.seed).mean;
    let (m2_bar, _) = mean_se(&m2);
    let m_bar = mat_mean(&ms);

    let lhs_mean = dt_bar - 2.0 * g_bar.norm_sq();
    let rhs_mean = c * (m2_bar - m_bar.norm_sq());
    let lhs_infl: Vec<f64> = dt.iter().zip(&grads).map(|(d, g)| d - 4.0 * g_bar.dot(&(g - &g_bar))).collect();
    let rhs_infl: Vec<f64> =
        m2.iter().zip(&ms).map(|(v, mm)| c * (v - 2.0 * m_bar.dot(&mm.axpy(-1.0, &m_bar)))).collect();
    let diff_infl: Vec<f64> = lhs_infl.iter().zip(&rhs_infl).map(|(a, b)| a - b).collect();

    let est = |mean: f64, infl: &[f64]| McEstimate {
        mean,
        std_error: mean_se(infl).1,
        n_samples: infl.len(),
        seed_base: spec.seed,
    };
    let lhs = est(lhs_mean, &lhs_infl);
    let rhs = est(rhs_mean, &rhs_infl);
    let identity = IdentityReport::from_influence(lhs.clone(), rhs, &diff_infl, spec.threshold);
    Ok(HjResidualReport { identity, lower_bound: BoundReport::nonnegative(lhs, 3.0) })
}

/// `N (E⟨|xᵀx̄ − x̄ᵀx|²⟩)^{1/2}`, standard error by the delta method.
pub fn skew_estimate(t: f64, h: &SymMat, prior: &Prior, spec: &McSpec) -> Result<McEstimate<f64>> {
    let m = spec.moments(t, h, prior)?;
    let v: Vec<f64> = m.iter().map(|g| g.mean_sq_skew).collect();
    let (mean, se) = mean_se(&v);
    let nf = spec.n as f64;
    let root = mean.max(0.0).sqrt();
    Ok(McEstimate {
        mean: nf * root,
        std_error: if root > 0.0 { nf * se / (2.0 * root) } else { 0.0 },
        n_samples: v.len(),
        seed_base: spec.seed,
    })
}

/// Paired second difference `F̄_N(t,h+εa) + F̄_N(t,h−εa) − 2F̄_N(t,h)`, which
/// should be nonnegative for PSD `a`.
pub fn psd_convexity_test(
    t: f64,
    h: &SymMat,
    a: &SymMat,
    prior: &Prior,
    spec: &McSpec,
    eps: f64,
) -> Result<BoundReport> {
    if !a.is_psd() {
        return Err(invalid("direction a must be PSD"));
    }
    let lo = h.axpy(-eps, a);
    let hi = h.axpy(eps, a);
    if !lo.is_psd() {
        return Err(invalid("h − eps·a must stay PSD"));
    }
    let v = spec.per_disorder(prior, |d| {
        let f = |hh: &SymMat| log_partition(t, hh, d, prior, Exec::Sequential).map(|l| l / d.n as f64);
        Ok(f(&hi)? + f(&lo)? - 2.0 * f(h)?)
    })?;
    Ok(BoundReport::nonnegative(scalar_estimate(&v, spec.seed), spec.threshold))
}

/// Whether `values` decrease, allowing at most `allowed` rises each within
/// the pooled standard error of the two points involved.
pub fn decreasing_with_slack(values: &[f64], std_errors: &[f64], allowed: usize) -> bool {
    let mut rises = 0;
    for i in 1..values.len() {
        if values[i] >= values[i - 1] {
            let pooled = (std_errors[i].powi(2) + std_errors[i - 1].powi(2)).sqrt();
            if values[i] - values[i - 1] > pooled {
                return false;
            }
            rises += 1;
        }
    }
    rises <= allowed
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationRow {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub variance_se: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationScan {
    pub rows: Vec<ConcentrationRow>,
    /// `Var(F_N) ≈ C N^{−α}`; `None` when some variance is zero.
    pub alpha_hat: Option<f64>,
    pub nonincreasing: bool,
}

/// Empirical `Var(F_N)` per size.
pub fn concentration_scan(
    t: f64,
    h: &SymMat,
    prior: &Prior,
    sizes: &[usize],
    n_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<ConcentrationScan> {
    let mut rows = Vec::new();
    for &n in sizes {
        let spec = McSpec { exec, ..McSpec::new(n, n_samples, seed) };
        let f = spec.per_disorder(prior, |d| Ok(log_partition(t, h, d, prior, Exec::Sequential)? / n as f64))?;
        let m = f.len() as f64;
        let mean = f.iter().sum::<f64>() / m;
        let dev2: Vec<f64> = f.iter().map(|v| (v - mean).powi(2)).collect();
        let variance = dev2.iter().sum::<f64>() / (m - 1.0);
        let (_, se) = mean_se(&dev2);
        rows.push(ConcentrationRow { n, mean, variance, variance_se: se });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].variance <= w[0].variance);
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    Ok(ConcentrationScan { alpha_hat: log_log_slope(&x, &y).map(|s| -s), rows, nonincreasing })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub n: usize,
    pub residual: McEstimate<f64>,
    pub variance_form: McEstimate<f64>,
}

/// HJ residual per size. Trends are read off the variance form
/// `(1/2N²)E⟨|xᵀx̄ − E⟨xᵀx̄⟩|²⟩`, which equals the residual and has smaller error.
pub fn residual_scan(t: f64, h: &SymMat, prior: &Prior, sizes: &[usize], n_samples: usize, seed: u64, exec: Exec) -> Result<Vec<ResidualRow>> {
    sizes
        .iter()
        .map(|&n| {
            let spec = McSpec { exec, ..McSpec::new(n, n_samples, seed) };
            let r = hj_residual_test(t, h, prior, &spec)?;
            Ok(ResidualRow { n, residual: r.identity.lhs, variance_form: r.identity.rhs })
        })
        .collect()
}

/// How `F̄_N(t, h)` is estimated on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeEnergyEstimator {
    /// Sample mean of `F_N(t, h)`.
    Direct,
    /// `ψ(h) + ∫₀ᵗ (1/2N²) E⟨|xᵀx̄|²⟩_s ds`, Gauss–Legendre in `s` with the given order.
    TimeIntegral(usize),
}

/// Grid of PSD points with integration weights.
#[derive(Clone, Debug, PartialEq)]
pub struct HGrid {
    pub points: Vec<SymMat>,
    pub weights: Vec<f64>,
}

impl HGrid {
    /// K = 1: trapezoid rule on `[0, M]`. K = 2: midpoint cells over
    /// `(h₁₁, h₂₂, h₁₂) ∈ [0,M]² × [−M,M]`, kept when PSD and `|h| ≤ M`,
    /// each weighted by its volume in entry coordinates.
    pub fn new(k: usize, m: f64, points: usize) -> Result<Self> {
        if !(m > 0.0) || points < 2 {
            return Err(invalid("grid needs M > 0 and at least 2 points"));
        }
        match k {
            1 => {
                let step = m / (points - 1) as f64;
                let pts = (0..points).map(|i| SymMat::from_diag(&[i as f64 * step])).collect();
                let w = (0..points)
                    .map(|i| if i == 0 || i == points - 1 { 0.5 * step } else { step })
                    .collect();
                Ok(Self { points: pts, weights: w })
            }
            2 => {
                let step = m / points as f64;
                let vol = step * step * (2.0 * step);
                let mut pts = Vec::new();
                for a in 0..points {
                    for b in 0..points {
                        for c in 0..points {
                            let h = SymMat::from_upper(
                                2,
                                vec![
                                    (a as f64 + 0.5) * step,
                                    -m + (c as f64 + 0.5) * 2.0 * step,
                                    (b as f64 + 0.5) * step,
                                ],
                            )?;
                            if h.norm() <= m && h.is_psd() {
                                pts.push(h);
                            }
                        }
                    }
                }
                let w = vec![vol; pts.len()];
                Ok(Self { points: pts, weights: w })
            }
            _ => Err(invalid(format!("integration grids exist for K = 1, 2 only, got {k}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub integral: f64,
    pub mc_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceScan {
    pub rows: Vec<ConvergenceRow>,
    pub decreasing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSpec {
    pub t: f64,
    pub m: f64,
    pub sizes: Vec<usize>,
    pub grid_points: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub quad_order: usize,
    pub estimator: FreeEnergyEstimator,
    pub hopf_lax: HopfLaxOptions,
    pub exec: Exec,
}

impl ConvergenceSpec {
    pub fn new(t: f64, m: f64, sizes: Vec<usize>) -> Self {
        Self {
            t,
            m,
            sizes,
            grid_points: 9,
            n_samples: 400,
            seed: 1,
            quad_order: 32,
            estimator: FreeEnergyEstimator::TimeIntegral(8),
            hopf_lax: HopfLaxOptions::default(),
            exec: Exec::default(),
        }
    }
}

/// Per-sample estimates of `F̄_N(t, h_g)` at every grid point.
fn grid_samples(
    spec: &ConvergenceSpec,
    n: usize,
    prior: &Prior,
    psi: &PriorPsi,
    grid: &HGrid,
) -> Result<Vec<Vec<f64>>> {
    let mc = McSpec { exec: spec.exec, ..McSpec::new(n, spec.n_samples, spec.seed) };
    let t = spec.t;
    let psi_values = grid.points.iter().map(|h| psi.value(h)).collect::<Result<Vec<_>>>()?;
    mc.per_disorder(prior, |d| {
        grid.points
            .iter()
            .zip(&psi_values)
            .map(|(h, &p0)| match spec.estimator {
                FreeEnergyEstimator::Direct => Ok(log_partition(t, h, d, prior, Exec::Sequential)? / n as f64),
                FreeEnergyEstimator::TimeIntegral(order) => {
                    if t == 0.0 {
                        return Ok(p0);
                    }
                    let rule = GaussLegendre::new(order, 0.0, t);
                    let nf = n as f64;
                    let mut acc = p0;
                    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
                        let g = enumerate_gibbs_with(s, h, d, prior, Exec::Sequential)?;
                        acc += w * g.mean_sq_overlap_signal / (2.0 * nf * nf);
                    }
                    Ok(acc)
                }
            })
            .collect()
    })
}

/// `∫_{|h|≤M} |F̄_N − f|(t, h) dh` per size, `f` from the Hopf–Lax solver.
pub fn convergence_scan(prior: &Prior, spec: &ConvergenceSpec) -> Result<ConvergenceScan> {
    if !(spec.t >= 0.0) {
        return Err(invalid(format!("t must be nonnegative, got {}", spec.t)));
    }
    let grid = HGrid::new(prior.dim(), spec.m, spec.grid_points)?;
    let psi = PriorPsi::new(prior.clone(), spec.quad_order)?;
    let l = psi.lipschitz();
    let f = grid
        .points
        .iter()
        .map(|h| hopflax::solve(spec.t, h, &psi, l, &spec.hopf_lax).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &n in &spec.sizes {
        let samples = grid_samples(spec, n, prior, &psi, &grid)?;
        let ns = samples.len() as f64;
        let bar: Vec<f64> = (0..grid.points.len()).map(|g| samples.iter().map(|s| s[g]).sum::<f64>() / ns).collect();
        let integral: f64 = bar.iter().zip(&f).zip(&grid.weights).map(|((b, fv), w)| w * (b - fv).abs()).sum();
        let influence: Vec<f64> = samples
            .iter()
            .map(|s| {
                (0..grid.points.len())
                    .map(|g| grid.weights[g] * (bar[g] - f[g]).signum() * (s[g] - bar[g]))
                    .sum()
            })
            .collect();
        rows.push(ConvergenceRow { n, integral, mc_error: mean_se(&influence).1 });
    }
    let v: Vec<f64> = rows.iter().map(|r| r.integral).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.mc_error).collect();
    Ok(ConvergenceScan { decreasing: decreasing_with_slack(&v, &e, 1), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_k2() -> Prior {
        Prior::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.3, 1.0], vec![-0.3, -1.0]],
            vec![0.25; 4],
        )
        .unwrap()
    }

    fn seq(n: usize, samples: usize, seed: u64) -> McSpec {
        McSpec { exec: Exec::Sequential, ..McSpec::new(n, samples, seed) }
    }

    #[test]
    fn mean_se_basics() {
        let (m, s) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(bar_estimates(0.1, &SymMat::from_diag(&[0.2]), &Prior::rademacher(), &seq(3, 1, 0)).is_err());
    }

    #[test]
    fn bar_estimates_trivial_point_and_psi() {
        let p = Prior::rademacher();
        let b = bar_estimates(0.0, &SymMat::zeros(1), &p, &seq(4, 10, 1)).unwrap();
        assert_eq!(b.free_energy.mean, 0.0);
        assert_eq!(b.free_energy.std_error, 0.0);
        assert!(b.gradient.is_none() && b.dt.is_none());

        let h = SymMat::from_diag(&[0.6]);
        let b = bar_estimates(0.0, &h, &p, &seq(3, 400, 2)).unwrap();
        let psi = crate::initcond::psi(&h, &p, 32).unwrap();
        assert!((b.free_energy.mean - psi).abs() <= 3.0 * b.free_energy.std_error, "{:?} vs {psi}", b.free_energy);
    }

    #[test]
    fn standard_error_scales() {
        let p = Prior::rademacher();
        let h = SymMat::from_diag(&[0.3]);
        let a = bar_estimates(0.5, &h, &p, &seq(4, 400, 3)).unwrap().free_energy.std_error;
        let b = bar_estimates(0.5, &h, &p, &seq(4, 800, 3)).unwrap().free_energy.std_error;
        let ratio = b / a;
        assert!((0.6..0.85).contains(&ratio), "{ratio}");
    }

    #[test]
    fn nishimori_centered_origin_is_exact() {
        let r = nishimori_test(0.0, &SymMat::zeros(2), &centered_k2(), &seq(3, 20, 4), &SymMat::identity(2)).unwrap();
        assert_eq!(r.z_score, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn nishimori_generic_and_swap() {
        let p = Prior::rademacher();
        let h = SymMat::from_diag(&[0.3]);
        let spec = seq(6, 300, 5);
        let r = nishimori_test(0.5, &h, &p, &spec, &SymMat::identity(1)).unwrap();
        assert!(r.pass, "{r:?}");
        let m = spec.moments(0.5, &h, &p).unwrap();
        let lhs: Vec<f64> = m.iter().map(|g| g.replica_overlap().get(0, 0)).collect();
        let rhs: Vec<f64> = m.iter().map(|g| g.mean_overlap_signal.get(0, 0)).collect();
        let swapped = IdentityReport::paired(&rhs, &lhs, 5, 4.0);
        assert_eq!(swapped.z_score.abs(), r.z_score.abs());
    }

    #[test]
    fn gibp_small_t_and_generic() {
        let p = Prior::rademacher();
        let r = gibp_test(1e-6, &SymMat::from_diag(&[0.2]), &p, &seq(6, 200, 6)).unwrap();
        assert!(r.pass(), "{r:?}");
        let r = gibp_test(1.0, &SymMat::from_diag(&[0.2]), &p, &seq(6, 300, 7)).unwrap();
        assert!(r.pass(), "{r:?}");
        assert!(gibp_test(0.0, &SymMat::from_diag(&[0.2]), &p, &seq(6, 10, 7)).is_err());
    }

    #[test]
    fn derivative_identities_k1() {
        let r = derivative_identity_test(0.5, &SymMat::from_diag(&[0.25]), &Prior::rademacher(), &seq(6, 300, 8)).unwrap();
        assert!(r.pass(), "{r:?}");
    }

    #[test]
    fn residual_pinned_posterior() {
        let p = Prior::rademacher();
        let r = hj_residual_test(0.05, &SymMat::from_diag(&[20.0]), &p, &seq(4, 200, 9)).unwrap();
        let lhs = &r.identity.lhs;
        assert!(lhs.mean.abs() <= 3.0 * lhs.std_error + 1e-9, "{lhs:?}");
        assert!(r.identity.rhs.mean.abs() < 1e-6);
    }

    #[test]
    fn variance_form_matches_its_algebraic_identity() {
        // E⟨|M − E⟨M⟩|²⟩ = E⟨|M|²⟩ − |E⟨M⟩|² between sample-level estimators
        let p = centered_k2();
        let spec = seq(3, 50, 10);
        let h = SymMat::scalar(2, 0.3);
        let m = spec.moments(0.5, &h, &p).unwrap();
        let ms: Vec<Mat> = m.iter().map(|g| g.mean_overlap_signal.clone()).collect();
        let mbar = mat_mean(&ms);
        let m2bar = m.iter().map(|g| g.mean_sq_overlap_signal).sum::<f64>() / 50.0;
        let direct: f64 = m
            .iter()
            .map(|g| g.mean_sq_overlap_signal - 2.0 * mbar.dot(&g.mean_overlap_signal) + mbar.norm_sq())
            .sum::<f64>()
            / 50.0;
        assert!((direct - (m2bar - mbar.norm_sq())).abs() < 1e-12);
    }

    #[test]
    fn skew_vanishes_in_rank_one() {
        let s = skew_estimate(0.5, &SymMat::from_diag(&[0.2]), &Prior::rademacher(), &seq(4, 10, 11)).unwrap();
        assert_eq!(s.mean, 0.0);
        let s = skew_estimate(0.5, &SymMat::scalar(2, 0.2), &centered_k2(), &seq(4, 30, 11)).unwrap();
        assert!(s.mean.is_finite() && s.mean > 0.0 && s.std_error >= 0.0);
    }

    #[test]
    fn psd_convexity_cases() {
        let p = Prior::rademacher();
        let h = SymMat::from_diag(&[0.3]);
        let r = psd_convexity_test(0.5, &h, &SymMat::zeros(1), &p, &seq(4, 10, 12), 0.01).unwrap();
        assert_eq!(r.estimate.mean, 0.0);
        assert!(r.pass);
        let r = psd_convexity_test(0.5, &h, &SymMat::from_diag(&[1.0]), &p, &seq(4, 200, 13), 0.05).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(psd_convexity_test(0.5, &h, &SymMat::from_diag(&[-1.0]), &p, &seq(4, 10, 12), 0.01).is_err());
    }

    #[test]
    fn trend_helpers() {
        assert!(decreasing_with_slack(&[4.0, 3.0, 2.0], &[0.1; 3], 0));
        assert!(decreasing_with_slack(&[4.0, 3.0, 3.05, 2.0], &[0.1; 4], 1));
        assert!(!decreasing_with_slack(&[4.0, 3.0, 3.05, 3.1], &[0.1; 4], 1));
        assert!(!decreasing_with_slack(&[4.0, 3.0, 3.5], &[0.1; 3], 1));
        let s = log_log_slope(&[1.0, 2.0, 4.0], &[1.0, 0.5, 0.25]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!(log_log_slope(&[1.0, 2.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn concentration_trivial_point() {
        let c = concentration_scan(0.0, &SymMat::zeros(1), &Prior::rademacher(), &[2, 4], 10, 1, Exec::Sequential).unwrap();
        assert!(c.rows.iter().all(|r| r.variance == 0.0));
        assert!(c.alpha_hat.is_none());
    }

    #[test]
    fn grids() {
        let g = HGrid::new(1, 1.0, 5).unwrap();
        assert_eq!(g.points.len(), 5);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = HGrid::new(2, 1.0, 6).unwrap();
        assert!(g.points.iter().all(|h| h.is_psd() && h.norm() <= 1.0));
        assert!(!g.points.is_empty());
        assert!(HGrid::new(3, 1.0, 4).is_err());
    }

    #[test]
    fn convergence_at_time_zero_is_exact() {
        let spec = ConvergenceSpec {
            n_samples: 4,
            exec: Exec::Sequential,
            ..ConvergenceSpec::new(0.0, 1.0, vec![2, 4])
        };
        let s = convergence_scan(&Prior::rademacher(), &spec).unwrap();
        assert!(s.rows.iter().all(|r| r.integral == 0.0));
    }
}
