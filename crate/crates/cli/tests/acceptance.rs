//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p hjcone-cli --test acceptance`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hjcone::finite_n::{dt_free_energy, free_energy, grad_free_energy, sample_disorder};
use hjcone::hopflax::{self, counterexample, HopfLaxOptions, SampleSpec};
use hjcone::initcond::{LinearPsi, Prior, PriorPsi};
use hjcone::nonlinearity::{h_dual, h_dual_numeric, h_eval, Quadratic};
use hjcone::rng::StreamRng;
use hjcone::symcone::{psd_part, sqrt_psd, SqrtCalculus};
use hjcone::verify::{self, ConvergenceSpec, McSpec};
use hjcone::{Exec, InitialCondition, SymMat};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn k2_prior() -> Prior {
    Prior::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.3, 1.0], vec![-0.3, -1.0]], vec![0.25; 4]).unwrap()
}

/// Uniform rotation of a diagonal with eigenvalues in `[lo, hi]`.
fn random_definite(k: usize, lo: f64, hi: f64, rng: &mut StreamRng) -> SymMat {
    let g = SymMat::from_fn(k, |_, _| rng.normal());
    let eig = hjcone::symcone::eig_sym(&g).unwrap();
    eig.map_eigenvalues(|_| lo + (hi - lo) * rng.uniform())
}

fn random_sym(k: usize, rng: &mut StreamRng) -> SymMat {
    let a = SymMat::from_fn(k, |_, _| rng.normal());
    a.scale(1.0 / a.norm())
}

fn five_point(f: impl Fn(f64) -> f64, eps: f64) -> f64 {
    (-f(2.0 * eps) + 8.0 * f(eps) - 8.0 * f(-eps) + f(-2.0 * eps)) / (12.0 * eps)
}

fn criterion_1() -> Outcome {
    let mut rng = StreamRng::new(101, 0);
    let eps = 1e-3;
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let (prior, k) = if i % 2 == 0 { (Prior::rademacher(), 1) } else { (k2_prior(), 2) };
        let t = 0.1 + 0.9 * rng.uniform();
        // min eigenvalue ≥ 0.1 and |h| ≤ 1
        let h = random_definite(k, 0.1, 1.0 / (k as f64).sqrt(), &mut rng);
        let d = sample_disorder(&prior, 4, 1000 + i).unwrap();
        let f = |tt: f64, hh: &SymMat| free_energy(tt, hh, &d, &prior).unwrap();

        let dt = dt_free_energy(t, &h, &d, &prior).unwrap();
        let fd_t = five_point(|e| f(t + e, &h), eps);
        worst = worst.max((dt - fd_t).abs() / dt.abs());

        let grad = grad_free_energy(t, &h, &d, &prior).unwrap();
        let coords: Vec<f64> = SymMat::basis(k).iter().map(|b| five_point(|e| f(t, &h.axpy(e, b)), eps)).collect();
        let fd = SymMat::from_coords(k, &coords).unwrap();
        worst = worst.max((&grad - &fd).norm() / grad.norm());
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} (limit 1e-6)"))
}

fn criterion_2() -> Outcome {
    let mut rng = StreamRng::new(202, 0);
    let mut relation = 0.0f64;
    let mut fd_err = 0.0f64;
    for i in 0..200 {
        let k = 1 + i % 4;
        let h = random_definite(k, 0.1, 2.0, &mut rng);
        let a = random_sym(k, &mut rng);
        let calc = SqrtCalculus::new(&h).unwrap();
        let s = calc.sqrt();
        let d = calc.dsqrt(&a);
        let y = calc.d2sqrt(&a);

        let sylv = SymMat::sym_part(&s.matmul(&d).axpy(1.0, &d.matmul(&s)));
        relation = relation.max((&sylv - &a).norm() / a.norm());
        let second = SymMat::sym_part(&d.matmul(&d).scale(2.0).axpy(1.0, &s.matmul(&y)).axpy(1.0, &y.matmul(&s)));
        relation = relation.max(second.norm() / d.norm_sq());

        let sq = |e: f64| sqrt_psd(&h.axpy(e, &a)).unwrap();
        // steps scaled to the distance from the cone boundary
        let lmin = hjcone::symcone::eig_sym(&h).unwrap().eigenvalues[0];
        let e1 = 1e-2 * lmin;
        let fd1 = (&(&sq(-2.0 * e1) - &sq(2.0 * e1)) + &(&sq(e1) - &sq(-e1)).scale(8.0)).scale(1.0 / (12.0 * e1));
        fd_err = fd_err.max((&fd1 - &d).norm() / d.norm());
        let e2 = 1e-2 * lmin;
        let fd2 = (&(&sq(e2) + &sq(-e2)).scale(16.0) - &(&(&sq(2.0 * e2) + &sq(-2.0 * e2)) + &s.scale(30.0)))
            .scale(1.0 / (12.0 * e2 * e2));
        fd_err = fd_err.max((&fd2 - &y).norm() / y.norm());
    }
    outcome(
        relation <= 1e-8 && fd_err <= 1e-6,
        format!("defining relations {relation:.2e} (limit 1e-8), finite differences {fd_err:.2e} (limit 1e-6)"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = StreamRng::new(303, 0);
    let nl = Quadratic::default();
    let (mut dual_err, mut flat_err, mut fenchel_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let k = 1 + i % 3;
        let q = SymMat::from_fn(k, |_, _| 2.0 * rng.normal());
        let numeric = h_dual_numeric(&q, &nl, q.norm() / 4.0 + 1.0, 64).unwrap();
        dual_err = dual_err.max((h_dual(&q) - numeric).abs());
        flat_err = flat_err.max((h_dual(&q) - h_dual(&psd_part(&q))).abs());
        let p = psd_part(&q);
        let q4 = p.scale(4.0);
        fenchel_err = fenchel_err.max((h_eval(&p) + h_dual(&q4) - p.dot(&q4)).abs());
    }
    outcome(
        dual_err <= 1e-4 && flat_err == 0.0 && fenchel_err <= 1e-10,
        format!("dual vs numeric {dual_err:.2e} (limit 1e-4), flattening {flat_err:.1e} (exact), Fenchel {fenchel_err:.2e} (limit 1e-10)"),
    )
}

fn criterion_4() -> Outcome {
    let opts = HopfLaxOptions::default();
    let mut linear_err = 0.0f64;
    for slope in [SymMat::from_diag(&[0.4]), SymMat::from_upper(2, vec![0.6, 0.2, 0.3]).unwrap()] {
        let k = slope.dim();
        let psi = LinearPsi::new(slope.clone());
        let l = psi.lipschitz();
        for ti in 0..5 {
            let t = 0.25 * ti as f64;
            for hi in 0..5 {
                let h = SymMat::scalar(k, 0.25 * hi as f64);
                let exact = slope.dot(&h) + 2.0 * slope.norm_sq() * t;
                let got = hopflax::solve(t, &h, &psi, l, &opts).unwrap().value;
                linear_err = linear_err.max((got - exact).abs());
            }
        }
    }

    let psi = PriorPsi::new(Prior::rademacher(), 32).unwrap();
    let l = psi.lipschitz();
    let mut rng = StreamRng::new(404, 0);
    let mut dp = 0.0f64;
    for _ in 0..30 {
        let t = 0.05 + 0.95 * rng.uniform();
        let s = 0.05 + 0.45 * rng.uniform();
        let h = SymMat::from_diag(&[rng.uniform()]);
        dp = dp.max(hopflax::dp_check(t, s, &h, &psi, l, &opts).unwrap());
    }

    let mut residuals: Vec<f64> = (0..50)
        .map(|_| {
            let t = 0.05 + 0.95 * rng.uniform();
            let h = SymMat::from_diag(&[0.05 + 0.95 * rng.uniform()]);
            hopflax::residual(t, &h, &psi, l, 1e-3, &opts).unwrap().value
        })
        .collect();
    residuals.sort_by(f64::total_cmp);
    let median = 0.5 * (residuals[24] + residuals[25]);

    let spec = SampleSpec::new(1, vec![0.25, 0.5, 1.0]);
    let weak = hopflax::weak_solution_checks(&psi, l, &spec, &opts).unwrap();
    let p = SymMat::from_diag(&[0.7]);
    let counter = hopflax::check_candidate(&counterexample(&p), &spec).unwrap();

    let pass = linear_err <= 1e-6 && dp <= 5e-4 && median <= 5e-3 && weak.passes() && !counter.monotone();
    outcome(
        pass,
        format!(
            "linear {linear_err:.1e}, DP {dp:.1e}, median residual {median:.1e}, weak checks {}, counterexample monotonicity violation {:.2e}",
            weak.passes(),
            counter.monotonicity_violation
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (prior, n, samples) in [(Prior::rademacher(), 6, 2000), (k2_prior(), 4, 1000)] {
        let k = prior.dim();
        let (t, h) = (0.5, SymMat::scalar(k, 0.3));
        let spec = McSpec::new(n, samples, 5);
        let nish = verify::nishimori_test(t, &h, &prior, &spec, &SymMat::identity(k)).unwrap();
        let gibp = verify::gibp_test(t, &h, &prior, &spec).unwrap();
        let der = verify::derivative_identity_test(t, &h, &prior, &spec).unwrap();
        let res = verify::hj_residual_test(t, &h, &prior, &spec).unwrap();
        let grad_z = der.gradient.iter().map(|g| g.z_score.abs()).fold(0.0, f64::max);
        pass &= nish.pass && gibp.pass() && der.pass() && res.pass();
        lines.push(format!(
            "K={k} N={n}: |z| nishimori {:.2} gibp {:.2}/{:.2} dt {:.2} grad {:.2} residual {:.2}, residual lower bound {}",
            nish.z_score.abs(),
            gibp.w.z_score.abs(),
            gibp.z.z_score.abs(),
            der.dt.z_score.abs(),
            grad_z,
            res.identity.z_score.abs(),
            res.lower_bound.pass
        ));
    }
    outcome(pass, lines.join("; "))
}

fn criterion_6() -> Outcome {
    let prior = Prior::rademacher();
    let h = SymMat::from_diag(&[0.3]);
    let conc = verify::concentration_scan(0.5, &h, &prior, &[2, 4, 8, 16], 400, 1, Exec::default()).unwrap();
    let res = verify::residual_scan(0.5, &h, &prior, &[2, 4, 8, 12], 400, 1, Exec::default()).unwrap();
    let res_decreasing = res.windows(2).all(|w| w[1].variance_form.mean < w[0].variance_form.mean);
    let conv = verify::convergence_scan(&prior, &ConvergenceSpec::new(0.5, 1.0, vec![2, 4, 8, 12])).unwrap();
    let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        conc.nonincreasing && res_decreasing && conv.decreasing,
        format!(
            "(a) Var {} alpha_hat {:.2}; (b) residual {}; (c) integral {}",
            fmt(conc.rows.iter().map(|r| r.variance).collect()),
            conc.alpha_hat.unwrap_or(f64::NAN),
            fmt(res.iter().map(|r| r.variance_form.mean).collect()),
            fmt(conv.rows.iter().map(|r| r.integral).collect()),
        ),
    )
}

fn run_cli(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_hjcone"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{sub} exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr)));
    }
    std::fs::read(out.join(format!("{sub}.csv"))).map_err(|e| e.to_string())
}

fn criterion_7() -> Outcome {
    let dir = std::env::temp_dir().join(format!("hjcone-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("config.txt");
    std::fs::write(
        &config,
        "atom = 1 @ 0.5\natom = -1 @ 0.5\nt = 0.5\nh = 0.3\nh_points = 5\nn_list = 2, 4, 6\nn_samples = 100\nseed = 7\n",
    )
    .unwrap();
    let mut differing = Vec::new();
    for sub in ["psi-table", "hj-solve", "identities", "residual-scan", "concentration", "convergence"] {
        let runs = [
            run_cli(sub, &config, &dir.join("a"), &[]),
            run_cli(sub, &config, &dir.join("b"), &[]),
            run_cli(sub, &config, &dir.join("c"), &["--threads", "1"]),
        ];
        match runs {
            [Ok(a), Ok(b), Ok(c)] if a == b && b == c => {}
            [Err(e), ..] | [_, Err(e), _] | [_, _, Err(e)] => differing.push(e),
            _ => differing.push(format!("{sub} output differs")),
        }
    }
    let seeded = [run_cli("concentration", &config, &dir.join("d"), &["--seed", "8"]), run_cli("concentration", &config, &dir.join("e"), &["--seed", "8"])];
    match seeded {
        [Ok(a), Ok(b)] if a == b => {}
        _ => differing.push("seed override output differs".into()),
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(differing.is_empty(), if differing.is_empty() { "6 subcommands byte-identical across reruns and thread counts".into() } else { differing.join("; ") })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 7] = [
        ("1 derivative agreement", criterion_1, Duration::from_secs(60)),
        ("2 Sylvester calculus", criterion_2, Duration::from_secs(10)),
        ("3 convex duality", criterion_3, Duration::from_secs(30)),
        ("4 Hopf-Lax correctness", criterion_4, Duration::from_secs(300)),
        ("5 statistical identities", criterion_5, Duration::from_secs(600)),
        ("6 trend checks", criterion_6, Duration::from_secs(1800)),
        ("7 determinism", criterion_7, Duration::from_secs(600)),
    ];
    // e.g. ACCEPTANCE_ONLY=2,7
    let only: Option<Vec<String>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failures = 0;
    for (name, check, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|id| name.split(' ').next() == Some(id.as_str()))) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        failures += usize::from(!pass);
        println!(
            "{} criterion {name}: {} [{:.1}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
