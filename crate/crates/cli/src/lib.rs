//! Subcommand runners behind the `hjcone` binary. Each run writes one CSV.

pub mod config;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use hjcone::finite_n::ENUMERATION_BUDGET;
use hjcone::hopflax::{self, HopfLaxOptions};
use hjcone::initcond::PriorPsi;
use hjcone::verify::{self, ConvergenceSpec, FreeEnergyEstimator, IdentityReport, McSpec};
use hjcone::{Exec, InitialCondition, SymMat};
use sha2::{Digest, Sha256};

pub use config::{parse_config, ConfigError, Estimator, ExperimentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    PsiTable,
    HjSolve,
    Identities,
    ResidualScan,
    Concentration,
    Convergence,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::PsiTable,
        Command::HjSolve,
        Command::Identities,
        Command::ResidualScan,
        Command::Concentration,
        Command::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::PsiTable => "psi-table",
            Command::HjSolve => "hj-solve",
            Command::Identities => "identities",
            Command::ResidualScan => "residual-scan",
            Command::Concentration => "concentration",
            Command::Convergence => "convergence",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(hjcone::Error),
    Io(std::io::Error),
    /// The CSV was written but at least one identity failed.
    IdentitiesFailed(PathBuf),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Core(hjcone::Error::BudgetExceeded { .. }) => 3,
            RunError::IdentitiesFailed(_) => 4,
            RunError::Core(_) | RunError::Io(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::IdentitiesFailed(p) => write!(f, "identity checks failed, see {}", p.display()),
        }
    }
}

impl std::error::Error for RunError {}

impl From<hjcone::Error> for RunError {
    fn from(e: hjcone::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

/// Hex SHA-256 of the canonical config text. The output directory is left
/// out so the same experiment hashes the same wherever it is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output = PathBuf::from(".");
    Sha256::digest(c.serialize().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// 12 significant digits.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self, cfg: &ExperimentConfig) -> String {
        let mut s = format!("# hjcone {} config_sha256={}\n", env!("CARGO_PKG_VERSION"), config_hash(cfg));
        s += &self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s += &r.join(",");
            s.push('\n');
        }
        s
    }
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn h_scales(cfg: &ExperimentConfig) -> Vec<f64> {
    let m = cfg.h_points - 1;
    (0..cfg.h_points).map(|i| cfg.h_max * i as f64 / m as f64).collect()
}

fn hopf_lax_options(cfg: &ExperimentConfig, exec: Exec) -> HopfLaxOptions {
    HopfLaxOptions {
        tolerance: cfg.tolerance,
        multistarts: cfg.multistarts,
        max_iterations: cfg.max_iterations,
        seed: cfg.seed,
        exec,
        ..HopfLaxOptions::default()
    }
}

/// Rejects sizes that cannot be enumerated before any work starts.
fn check_budget(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let atoms = cfg.atoms.len();
    for &n in &cfg.n_list {
        let fits = u32::try_from(n).ok().and_then(|e| (atoms as u64).checked_pow(e)).is_some_and(|c| c <= ENUMERATION_BUDGET);
        if !fits {
            return Err(hjcone::Error::BudgetExceeded { n, atoms }.into());
        }
    }
    Ok(())
}

fn psi_table(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let psi = PriorPsi::new(cfg.prior(), cfg.quad_order)?;
    let mut table = Table::new(&["h_scale", "psi", "grad_norm"]);
    for s in h_scales(cfg) {
        let (v, g) = psi.value_and_gradient(&SymMat::scalar(cfg.k, s))?;
        table.push(vec![num(s), num(v), num(g.norm())]);
    }
    Ok(table)
}

fn hj_solve(cfg: &ExperimentConfig, exec: Exec) -> Result<Table, RunError> {
    let psi = PriorPsi::new(cfg.prior(), cfg.quad_order)?;
    let lipschitz = psi.lipschitz();
    let opts = hopf_lax_options(cfg, exec);
    let mut table = Table::new(&["t", "h_scale", "value", "maximizer_norm", "starts_used", "ascent_iterations"]);
    for &t in &cfg.t {
        for s in h_scales(cfg) {
            let r = hopflax::solve(t, &SymMat::scalar(cfg.k, s), &psi, lipschitz, &opts)?;
            table.push(vec![
                num(t),
                num(s),
                num(r.value),
                num(r.maximizer.norm()),
                r.starts_used.to_string(),
                r.ascent_iterations.to_string(),
            ]);
        }
    }
    Ok(table)
}

fn identities(cfg: &ExperimentConfig, exec: Exec) -> Result<(Table, bool), RunError> {
    let prior = cfg.prior();
    let t = cfg.t[0];
    let h = SymMat::scalar(cfg.k, cfg.h);
    let mut table = Table::new(&["n", "identity", "lhs", "lhs_se", "rhs", "rhs_se", "z_score", "pass"]);
    let mut all = true;
    for &n in &cfg.n_list {
        let spec = McSpec { threshold: cfg.threshold, exec, ..McSpec::new(n, cfg.n_samples, cfg.seed) };
        let mut add = |name: String, r: &IdentityReport| {
            all &= r.pass;
            table.push(vec![
                n.to_string(),
                name,
                num(r.lhs.mean),
                num(r.lhs.std_error),
                num(r.rhs.mean),
                num(r.rhs.std_error),
                num(r.z_score),
                r.pass.to_string(),
            ]);
        };
        add("nishimori".into(), &verify::nishimori_test(t, &h, &prior, &spec, &SymMat::identity(cfg.k))?);
        let gibp = verify::gibp_test(t, &h, &prior, &spec)?;
        add("gibp_w".into(), &gibp.w);
        add("gibp_z".into(), &gibp.z);
        let der = verify::derivative_identity_test(t, &h, &prior, &spec)?;
        add("dt_free_energy".into(), &der.dt);
        for (i, g) in der.gradient.iter().enumerate() {
            add(format!("grad_free_energy_{i}"), g);
        }
        let res = verify::hj_residual_test(t, &h, &prior, &spec)?;
        add("hj_residual".into(), &res.identity);
        let lb = &res.lower_bound;
        all &= lb.pass && der.gradient_psd;
        let z = if lb.estimate.std_error > 0.0 { lb.estimate.mean / lb.estimate.std_error } else { 0.0 };
        table.push(vec![
            n.to_string(),
            "hj_residual_nonnegative".into(),
            num(lb.estimate.mean),
            num(lb.estimate.std_error),
            num(0.0),
            num(0.0),
            num(z),
            lb.pass.to_string(),
        ]);
    }
    Ok((table, all))
}

fn residual_scan(cfg: &ExperimentConfig, exec: Exec) -> Result<Table, RunError> {
    let rows = verify::residual_scan(cfg.t[0], &SymMat::scalar(cfg.k, cfg.h), &cfg.prior(), &cfg.n_list, cfg.n_samples, cfg.seed, exec)?;
    let mut table = Table::new(&["n", "residual", "residual_se", "variance_form", "variance_form_se"]);
    for r in rows {
        table.push(vec![
            r.n.to_string(),
            num(r.residual.mean),
            num(r.residual.std_error),
            num(r.variance_form.mean),
            num(r.variance_form.std_error),
        ]);
    }
    Ok(table)
}

fn concentration(cfg: &ExperimentConfig, exec: Exec) -> Result<Table, RunError> {
    let scan = verify::concentration_scan(cfg.t[0], &SymMat::scalar(cfg.k, cfg.h), &cfg.prior(), &cfg.n_list, cfg.n_samples, cfg.seed, exec)?;
    let alpha = scan.alpha_hat.map_or_else(|| "nan".to_string(), num);
    let mut table = Table::new(&["n", "mean", "variance", "variance_se", "alpha_hat"]);
    for r in scan.rows {
        table.push(vec![r.n.to_string(), num(r.mean), num(r.variance), num(r.variance_se), alpha.clone()]);
    }
    Ok(table)
}

fn convergence(cfg: &ExperimentConfig, exec: Exec) -> Result<Table, RunError> {
    let spec = ConvergenceSpec {
        grid_points: cfg.h_points,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        quad_order: cfg.quad_order,
        estimator: match cfg.estimator {
            Estimator::Direct => FreeEnergyEstimator::Direct,
            Estimator::TimeIntegral => FreeEnergyEstimator::TimeIntegral(cfg.time_nodes),
        },
        hopf_lax: hopf_lax_options(cfg, exec),
        exec,
        ..ConvergenceSpec::new(cfg.t[0], cfg.h_max, cfg.n_list.clone())
    };
    let scan = verify::convergence_scan(&cfg.prior(), &spec)?;
    let mut table = Table::new(&["n", "integral", "mc_error"]);
    for r in scan.rows {
        table.push(vec![r.n.to_string(), num(r.integral), num(r.mc_error)]);
    }
    Ok(table)
}

/// Runs one subcommand and writes `<out_dir>/<name>.csv`, returning its path.
pub fn run(command: Command, cfg: &ExperimentConfig, out_dir: &Path, exec: Exec) -> Result<PathBuf, RunError> {
    if matches!(command, Command::Identities | Command::ResidualScan | Command::Concentration | Command::Convergence) {
        check_budget(cfg)?;
    }
    let mut ok = true;
    let table = match command {
        Command::PsiTable => psi_table(cfg)?,
        Command::HjSolve => hj_solve(cfg, exec)?,
        Command::Identities => {
            let (t, pass) = identities(cfg, exec)?;
            ok = pass;
            t
        }
        Command::ResidualScan => residual_scan(cfg, exec)?,
        Command::Concentration => concentration(cfg, exec)?,
        Command::Convergence => convergence(cfg, exec)?,
    };
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{}.csv", command.name()));
    write_atomic(&path, &table.render(cfg))?;
    if ok {
        Ok(path)
    } else {
        Err(RunError::IdentitiesFailed(path))
    }
}
