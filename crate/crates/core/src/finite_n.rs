//! Finite-`N` spiked matrix model with a Gaussian side channel.
//!
//! ```text
//! H_N(t,h,x) = √(t/N) x·Wx + (t/N)|xᵀx̄|² − (t/2N)|xᵀx|²
//!            + √h·xᵀz + h·xᵀx̄ − ½ h·xᵀx
//! ```
//!
//! Gibbs averages are exact sums over all `atoms^N` configurations, weighted
//! by the product prior.

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::initcond::Prior;
use crate::rng::{normal_at, uniform_at};
use crate::symcone::{sqrt_psd, Mat, SqrtCalculus, SymMat};

/// Largest number of configurations [`enumerate_gibbs`] will visit.
pub const ENUMERATION_BUDGET: u64 = 1 << 24;

const STREAM_SIGNAL: u64 = 1;
const STREAM_W: u64 = 2;
const STREAM_Z: u64 = 3;
const TARGET_CHUNKS: u64 = 64;

/// One realization of `(x̄, W, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Disorder {
    pub n: usize,
    pub k: usize,
    /// `N × K` row-major.
    pub signal: Vec<f64>,
    /// Prior atom index of each signal row.
    pub atom_index: Vec<usize>,
    /// `N × N` row-major, not symmetrized.
    pub w: Vec<f64>,
    /// `N × K` row-major.
    pub z: Vec<f64>,
    pub seed: u64,
}

impl Disorder {
    pub fn signal_row(&self, i: usize) -> &[f64] {
        &self.signal[i * self.k..(i + 1) * self.k]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    pub fn w_at(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    /// Frobenius norm of `z`.
    pub fn z_norm(&self) -> f64 {
        self.z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖W‖_{ℓ²→ℓ²}` by power iteration on `WᵀW`.
    pub fn w_operator_norm(&self, iterations: usize) -> f64 {
        let n = self.n;
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= nv);
            let wv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.w_at(i, j) * v[j]).sum()).collect();
            let wtwv: Vec<f64> = (0..n).map(|j| (0..n).map(|i| self.w_at(i, j) * wv[i]).sum()).collect();
            lambda = wv.iter().map(|x| x * x).sum::<f64>();
            v = wtwv;
            if v.iter().all(|x| *x == 0.0) {
                return 0.0;
            }
        }
        lambda.sqrt()
    }
}

/// Draws `x̄` rows from the prior and `W`, `z` standard Gaussian, all keyed by `seed`.
pub fn sample_disorder(prior: &Prior, n: usize, seed: u64) -> Result<Disorder> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    let k = prior.dim();
    let mut cumulative = Vec::with_capacity(prior.len());
    let mut acc = 0.0;
    for w in prior.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let last_positive = prior.weights().iter().rposition(|w| *w > 0.0).expect("weights sum to one");
    let mut atom_index = Vec::with_capacity(n);
    let mut signal = Vec::with_capacity(n * k);
    for i in 0..n {
        let u = uniform_at(seed, STREAM_SIGNAL, i as u64);
        let j = cumulative
            .iter()
            .zip(prior.weights())
            .position(|(c, w)| *w > 0.0 && u < *c)
            .unwrap_or(last_positive);
        atom_index.push(j);
        signal.extend_from_slice(&prior.atoms()[j]);
    }
    let w = (0..n * n).map(|idx| normal_at(seed, STREAM_W, idx as u64)).collect();
    let z = (0..n * k).map(|idx| normal_at(seed, STREAM_Z, idx as u64)).collect();
    Ok(Disorder { n, k, signal, atom_index, w, z, seed })
}

fn check_args(t: f64, h: &SymMat, d: &Disorder) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("t must be finite and nonnegative, got {t}")));
    }
    if h.dim() != d.k {
        return Err(Error::DimensionMismatch { expected: d.k, found: h.dim() });
    }
    Ok(())
}

/// `H_N(t, h, x)` for a configuration `x` given as `N × K` row-major.
pub fn hamiltonian(t: f64, h: &SymMat, x: &[f64], d: &Disorder) -> Result<f64> {
    check_args(t, h, d)?;
    let (n, k) = (d.n, d.k);
    if x.len() != n * k {
        return Err(Error::DimensionMismatch { expected: n * k, found: x.len() });
    }
    let sqrt_h = sqrt_psd(h)?;
    let nf = n as f64;
    let gram = |a: &[f64], b: &[f64]| -> Mat {
        Mat::from_fn(k, |r, c| (0..n).map(|i| a[i * k + r] * b[i * k + c]).sum())
    };
    let mut xwx = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..k).map(|c| x[i * k + c] * x[j * k + c]).sum();
            xwx += d.w_at(i, j) * dot;
        }
    }
    let m = gram(x, &d.signal);
    let s = gram(x, x);
    let xz = gram(x, &d.z);
    Ok((t / nf).sqrt() * xwx + (t / nf) * m.norm_sq() - (t / (2.0 * nf)) * s.norm_sq()
        + sqrt_h.dot_mat(&xz)
        + h.dot_mat(&m)
        - 0.5 * h.dot_mat(&s))
}

/// Exact Gibbs averages for one disorder at `(t, h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsMoments {
    pub n: usize,
    pub k: usize,
    pub log_z: f64,
    /// `⟨x⟩`, `N × K` row-major.
    pub mean_x: Vec<f64>,
    /// `⟨xᵀx̄⟩`; not symmetric for a single disorder.
    pub mean_overlap_signal: Mat,
    /// `⟨xᵀx⟩`.
    pub mean_self_overlap: SymMat,
    /// `⟨xᵀz⟩`.
    pub mean_xz: Mat,
    /// `⟨|xᵀx̄|²⟩`.
    pub mean_sq_overlap_signal: f64,
    /// `⟨|xᵀx|²⟩`.
    pub mean_sq_self_overlap: f64,
    /// `⟨x·Wx⟩`.
    pub mean_x_w_x: f64,
    /// `⟨|xᵀx̄ − x̄ᵀx|²⟩`.
    pub mean_sq_skew: f64,
}

impl GibbsMoments {
    pub fn free_energy(&self) -> f64 {
        self.log_z / self.n as f64
    }

    /// `⟨xᵀx'⟩ = ⟨x⟩ᵀ⟨x⟩` for two independent replicas.
    pub fn replica_overlap(&self) -> SymMat {
        let (n, k) = (self.n, self.k);
        let m = &self.mean_x;
        SymMat::from_fn(k, |r, c| (0..n).map(|i| m[i * k + r] * m[i * k + c]).sum())
    }

    /// `(1/N)⟨ x·Wx/(2√(tN)) + |xᵀx̄|²/N − |xᵀx|²/(2N) ⟩`.
    pub fn dt_free_energy(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid(format!("the time derivative needs t > 0, got {t}")));
        }
        let nf = self.n as f64;
        Ok((self.mean_x_w_x / (2.0 * (t * nf).sqrt()) + self.mean_sq_overlap_signal / nf
            - self.mean_sq_self_overlap / (2.0 * nf))
            / nf)
    }

    /// `a·∇F_N = (1/N)⟨ D_√h(a)·xᵀz + a·xᵀx̄ − ½ a·xᵀx ⟩`, over an orthonormal basis.
    pub fn grad_free_energy(&self, h: &SymMat) -> Result<SymMat> {
        if h.dim() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, found: h.dim() });
        }
        let calc = SqrtCalculus::new(h)?;
        let nf = self.n as f64;
        let coords: Vec<f64> = SymMat::basis(self.k)
            .iter()
            .map(|a| {
                (calc.dsqrt(a).dot_mat(&self.mean_xz) + a.dot_mat(&self.mean_overlap_signal)
                    - 0.5 * a.dot(&self.mean_self_overlap))
                    / nf
            })
            .collect();
        SymMat::from_coords(self.k, &coords)
    }
}

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Precomputed per-row and pairwise pieces of the Hamiltonian.
struct Tables {
    n: usize,
    k: usize,
    /// Atoms with positive weight, `A × K`.
    atoms: Vec<Vec<f64>>,
    /// `ξ_a · ξ_b`.
    gram: Vec<f64>,
    /// `√h·ξ_aᵀz_i + h·ξ_aᵀx̄_i − ½ h·ξ_aᵀξ_a + ln p_a`, indexed `i·A + a`.
    row_term: Vec<f64>,
    /// `W_ij + W_ji` for `i ≠ j`, `W_ii` on the diagonal.
    w_sym: Vec<f64>,
    coupling: f64,
    quad: f64,
}

impl Tables {
    fn new(t: f64, h: &SymMat, d: &Disorder, prior: &Prior) -> Result<Self> {
        check_args(t, h, d)?;
        if prior.dim() != d.k {
            return Err(Error::DimensionMismatch { expected: d.k, found: prior.dim() });
        }
        let (n, k) = (d.n, d.k);
        let support: Vec<usize> = (0..prior.len()).filter(|&j| prior.weights()[j] > 0.0).collect();
        let na = support.len() as u64;
        let too_big = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(na).filter(|v| *v <= ENUMERATION_BUDGET));
        if too_big.is_none() {
            return Err(Error::BudgetExceeded { n, atoms: support.len() });
        }
        let atoms: Vec<Vec<f64>> = support.iter().map(|&j| prior.atoms()[j].clone()).collect();
        let a = atoms.len();
        let gram = (0..a * a)
            .map(|idx| atoms[idx / a].iter().zip(&atoms[idx % a]).map(|(u, v)| u * v).sum())
            .collect();
        let sqrt_h = sqrt_psd(h)?;
        let bil = |m: &SymMat, u: &[f64], v: &[f64]| -> f64 {
            let mut s = 0.0;
            for r in 0..k {
                for c in 0..k {
                    s += m.get(r, c) * u[r] * v[c];
                }
            }
            s
        };
        let mut row_term = Vec::with_capacity(n * a);
        for i in 0..n {
            for (ai, &j) in support.iter().enumerate() {
                let xi = &atoms[ai];
                row_term.push(
                    bil(&sqrt_h, xi, d.z_row(i)) + bil(h, xi, d.signal_row(i)) - 0.5 * bil(h, xi, xi)
                        + prior.weights()[j].ln(),
                );
            }
        }
        let w_sym = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i == j {
                    d.w_at(i, i)
                } else {
                    d.w_at(i, j) + d.w_at(j, i)
                }
            })
            .collect();
        let nf = n as f64;
        Ok(Self { n, k, atoms, gram, row_term, w_sym, coupling: (t / nf).sqrt(), quad: t / nf })
    }

    fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    fn chunking(&self) -> (usize, usize) {
        let a = self.num_atoms() as u64;
        let mut depth = 0;
        let mut chunks = 1u64;
        while depth < self.n && chunks < TARGET_CHUNKS {
            chunks *= a;
            depth += 1;
        }
        (depth, chunks as usize)
    }
}

/// State after fixing the first rows of a configuration.
#[derive(Clone)]
struct Prefix {
    xwx: f64,
    linear: f64,
    /// `xᵀx̄`, `xᵀx`, `xᵀz` as K×K row-major.
    m: Vec<f64>,
    s: Vec<f64>,
    xz: Vec<f64>,
}

impl Prefix {
    fn empty(k: usize) -> Self {
        Self { xwx: 0.0, linear: 0.0, m: vec![0.0; k * k], s: vec![0.0; k * k], xz: vec![0.0; k * k] }
    }
}

/// Depth-first walk over configurations; `visit` receives the Hamiltonian,
/// the full prefix state and the row-atom choices.
struct Walker<'a> {
    tab: &'a Tables,
    d: &'a Disorder,
    stack: Vec<Prefix>,
    choice: Vec<usize>,
    track: bool,
}

impl<'a> Walker<'a> {
    fn new(tab: &'a Tables, d: &'a Disorder, track: bool) -> Self {
        let k = tab.k;
        Self { tab, d, stack: vec![Prefix::empty(k); tab.n + 1], choice: vec![0; tab.n], track }
    }

    #[inline]
    fn push_row(&mut self, depth: usize, a: usize) {
        let tab = self.tab;
        let na = tab.num_atoms();
        let k = tab.k;
        let (lo, hi) = self.stack.split_at_mut(depth + 1);
        let prev = &lo[depth];
        let next = &mut hi[0];
        let mut pair = tab.w_sym[depth * tab.n + depth] * tab.gram[a * na + a];
        for (i, &b) in self.choice[..depth].iter().enumerate() {
            pair += tab.w_sym[i * tab.n + depth] * tab.gram[b * na + a];
        }
        next.xwx = prev.xwx + pair;
        next.linear = prev.linear + tab.row_term[depth * na + a];
        let xi = &tab.atoms[a];
        let xbar = self.d.signal_row(depth);
        for r in 0..k {
            for c in 0..k {
                next.m[r * k + c] = prev.m[r * k + c] + xi[r] * xbar[c];
                next.s[r * k + c] = prev.s[r * k + c] + xi[r] * xi[c];
            }
        }
        if self.track {
            let z = self.d.z_row(depth);
            for r in 0..k {
                for c in 0..k {
                    next.xz[r * k + c] = prev.xz[r * k + c] + xi[r] * z[c];
                }
            }
        }
        self.choice[depth] = a;
    }

    #[inline]
    fn energy(&self, p: &Prefix) -> (f64, f64, f64) {
        let m2: f64 = p.m.iter().map(|v| v * v).sum();
        let s2: f64 = p.s.iter().map(|v| v * v).sum();
        let h = self.tab.coupling * p.xwx + self.tab.quad * m2 - 0.5 * self.tab.quad * s2 + p.linear;
        (h, m2, s2)
    }

    /// Visits every completion of the fixed prefix `rows`.
    fn walk(&mut self, rows: &[usize], visit: &mut dyn FnMut(&Self, &Prefix, f64, f64, f64)) {
        let n = self.tab.n;
        let na = self.tab.num_atoms();
        for (depth, &a) in rows.iter().enumerate() {
            self.push_row(depth, a);
        }
        let start = rows.len();
        if start == n {
            let p = &self.stack[n];
            let (h, m2, s2) = self.energy(p);
            visit(self, p, h, m2, s2);
            return;
        }
        let mut odometer = vec![0usize; n - start];
        for depth in start..n {
            self.push_row(depth, 0);
        }
        loop {
            let p = &self.stack[n];
            let (h, m2, s2) = self.energy(p);
            visit(self, p, h, m2, s2);
            // advance the rightmost digit that can move
            let mut pos = n - start;
            loop {
                if pos == 0 {
                    return;
                }
                pos -= 1;
                odometer[pos] += 1;
                if odometer[pos] < na {
                    break;
                }
                odometer[pos] = 0;
            }
            for depth in (start + pos)..n {
                self.push_row(depth, odometer[depth - start]);
            }
        }
    }
}

fn chunk_rows(index: usize, depth: usize, na: usize) -> Vec<usize> {
    let mut rows = vec![0; depth];
    let mut r = index;
    for d in (0..depth).rev() {
        rows[d] = r % na;
        r /= na;
    }
    rows
}

fn max_energy(tab: &Tables, d: &Disorder, exec: Exec) -> f64 {
    let (depth, chunks) = tab.chunking();
    let na = tab.num_atoms();
    exec.map(chunks, |c| {
        let mut w = Walker::new(tab, d, false);
        let mut best = f64::NEG_INFINITY;
        w.walk(&chunk_rows(c, depth, na), &mut |_, _, h, _, _| best = best.max(h));
        best
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max)
}

/// `log Z_N` alone.
pub fn log_partition(t: f64, h: &SymMat, d: &Disorder, prior: &Prior, exec: Exec) -> Result<f64> {
    let tab = Tables::new(t, h, d, prior)?;
    let shift = max_energy(&tab, d, exec);
    let (depth, chunks) = tab.chunking();
    let na = tab.num_atoms();
    let parts = exec.map(chunks, |c| {
        let mut w = Walker::new(&tab, d, false);
        let mut z = Compensated::default();
        w.walk(&chunk_rows(c, depth, na), &mut |_, _, h, _, _| z.add((h - shift).exp()));
        z
    });
    let mut total = Compensated::default();
    for p in parts {
        total.add(p.sum);
        total.add(p.comp);
    }
    Ok(shift + total.value().ln())
}

/// `F_N(t, h) = log Z_N / N`.
pub fn free_energy(t: f64, h: &SymMat, d: &Disorder, prior: &Prior) -> Result<f64> {
    Ok(log_partition(t, h, d, prior, Exec::default())? / d.n as f64)
}

struct Accum {
    z: Compensated,
    mean_x: Vec<Compensated>,
    m: Vec<Compensated>,
    s: Vec<Compensated>,
    xz: Vec<Compensated>,
    m2: Compensated,
    s2: Compensated,
    xwx: Compensated,
    skew: Compensated,
}

impl Accum {
    fn new(n: usize, k: usize) -> Self {
        Self {
            z: Compensated::default(),
            mean_x: vec![Compensated::default(); n * k],
            m: vec![Compensated::default(); k * k],
            s: vec![Compensated::default(); k * k],
            xz: vec![Compensated::default(); k * k],
            m2: Compensated::default(),
            s2: Compensated::default(),
            xwx: Compensated::default(),
            skew: Compensated::default(),
        }
    }

    fn merge(&mut self, other: &Accum) {
        let add = |a: &mut Compensated, b: &Compensated| {
            a.add(b.sum);
            a.add(b.comp);
        };
        add(&mut self.z, &other.z);
        for (a, b) in self.mean_x.iter_mut().zip(&other.mean_x) {
            add(a, b);
        }
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            add(a, b);
        }
        for (a, b) in self.s.iter_mut().zip(&other.s) {
            add(a, b);
        }
        for (a, b) in self.xz.iter_mut().zip(&other.xz) {
            add(a, b);
        }
        add(&mut self.m2, &other.m2);
        add(&mut self.s2, &other.s2);
        add(&mut self.xwx, &other.xwx);
        add(&mut self.skew, &other.skew);
    }
}

/// Exact Gibbs moments, parallel over configuration prefixes.
pub fn enumerate_gibbs(t: f64, h: &SymMat, d: &Disorder, prior: &Prior) -> Result<GibbsMoments> {
    enumerate_gibbs_with(t, h, d, prior, Exec::default())
}

pub fn enumerate_gibbs_with(t: f64, h: &SymMat, d: &Disorder, prior: &Prior, exec: Exec) -> Result<GibbsMoments> {
    let tab = Tables::new(t, h, d, prior)?;
    let (n, k) = (d.n, d.k);
    let shift = max_energy(&tab, d, exec);
    let (depth, chunks) = tab.chunking();
    let na = tab.num_atoms();
    let parts = exec.map(chunks, |c| {
        let mut w = Walker::new(&tab, d, true);
        let mut acc = Accum::new(n, k);
        w.walk(&chunk_rows(c, depth, na), &mut |walker, p, h, m2, s2| {
            let wt = (h - shift).exp();
            acc.z.add(wt);
            for (i, &a) in walker.choice.iter().enumerate() {
                let xi = &walker.tab.atoms[a];
                for c in 0..k {
                    acc.mean_x[i * k + c].add(wt * xi[c]);
                }
            }
            let mut skew = 0.0;
            for r in 0..k {
                for c in 0..k {
                    acc.m[r * k + c].add(wt * p.m[r * k + c]);
                    acc.s[r * k + c].add(wt * p.s[r * k + c]);
                    acc.xz[r * k + c].add(wt * p.xz[r * k + c]);
                    let e = p.m[r * k + c] - p.m[c * k + r];
                    skew += e * e;
                }
            }
            acc.m2.add(wt * m2);
            acc.s2.add(wt * s2);
            acc.xwx.add(wt * p.xwx);
            acc.skew.add(wt * skew);
        });
        acc
    });
    let mut total = Accum::new(n, k);
    for p in &parts {
        total.merge(p);
    }
    let z = total.z.value();
    let avg = |c: &Compensated| c.value() / z;
    let mat = |v: &[Compensated]| Mat::from_row_major(k, v.iter().map(avg).collect()).expect("k×k");
    let s = mat(&total.s);
    Ok(GibbsMoments {
        n,
        k,
        log_z: shift + z.ln(),
        mean_x: total.mean_x.iter().map(avg).collect(),
        mean_overlap_signal: mat(&total.m),
        mean_self_overlap: SymMat::sym_part(&s),
        mean_xz: mat(&total.xz),
        mean_sq_overlap_signal: avg(&total.m2),
        mean_sq_self_overlap: avg(&total.s2),
        mean_x_w_x: avg(&total.xwx),
        mean_sq_skew: avg(&total.skew),
    })
}

/// `∂ₜF_N(t, h)` from the Gibbs moments.
pub fn dt_free_energy(t: f64, h: &SymMat, d: &Disorder, prior: &Prior) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("the time derivative needs t > 0, got {t}")));
    }
    enumerate_gibbs(t, h, d, prior)?.dt_free_energy(t)
}

/// `∇F_N(t, h)` from the Gibbs moments; `h` must be definite.
pub fn grad_free_energy(t: f64, h: &SymMat, d: &Disorder, prior: &Prior) -> Result<SymMat> {
    SqrtCalculus::new(h)?;
    enumerate_gibbs(t, h, d, prior)?.grad_free_energy(h)
}

/// Explicit bounds on `|∂ₜF_N|` and `|∇F_N|` for one disorder:
/// `‖W‖B²/(2√(tN)) + 3B⁴/2` and `3B²/2 + B|z||h⁻¹|^{1/2}/(2√N)`.
pub fn derivative_bounds(t: f64, h: &SymMat, d: &Disorder, prior: &Prior) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(invalid(format!("derivative bounds need t > 0, got {t}")));
    }
    let b = prior.support_bound();
    let nf = d.n as f64;
    let inv = crate::symcone::inverse_norm(h)?;
    let dt = d.w_operator_norm(200) * b * b / (2.0 * (t * nf).sqrt()) + 1.5 * b.powi(4);
    let grad = 1.5 * b * b + b * d.z_norm() * inv.sqrt() / (2.0 * nf.sqrt());
    Ok((dt, grad))
}
