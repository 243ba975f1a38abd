//! Plain-text experiment configuration.
//!
//! ```text
//! # Rademacher prior
//! atom = 1 @ 0.5
//! atom = -1 @ 0.5
//! t = 0.5
//! n_list = 2, 4, 8
//! ```

use std::fmt;
use std::path::PathBuf;

use hjcone::Prior;

/// How the convergence scan estimates `F̄_N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Direct,
    TimeIntegral,
}

impl Estimator {
    fn as_str(self) -> &'static str {
        match self {
            Estimator::Direct => "direct",
            Estimator::TimeIntegral => "time-integral",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// `(atom, weight)` pairs in file order.
    pub atoms: Vec<(Vec<f64>, f64)>,
    pub k: usize,
    pub t: Vec<f64>,
    /// Scale of `h = h·I` for single-point experiments.
    pub h: f64,
    /// Radius `M` of the `h` grid.
    pub h_max: f64,
    pub h_points: usize,
    pub n_list: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub quad_order: usize,
    pub tolerance: f64,
    pub multistarts: usize,
    pub max_iterations: usize,
    /// z-score threshold of the identity tests.
    pub threshold: f64,
    pub estimator: Estimator,
    pub time_nodes: usize,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn prior(&self) -> Prior {
        let (atoms, weights) = self.atoms.iter().cloned().unzip();
        Prior::new(atoms, weights).expect("validated at parse time")
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn serialize(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        for (a, w) in &self.atoms {
            s += &format!("atom = {} @ {}\n", list(a), w);
        }
        s += &format!("k = {}\n", self.k);
        s += &format!("t = {}\n", list(&self.t));
        s += &format!("h = {}\n", self.h);
        s += &format!("h_max = {}\n", self.h_max);
        s += &format!("h_points = {}\n", self.h_points);
        let ns: Vec<String> = self.n_list.iter().map(|n| n.to_string()).collect();
        s += &format!("n_list = {}\n", ns.join(", "));
        s += &format!("n_samples = {}\n", self.n_samples);
        s += &format!("seed = {}\n", self.seed);
        s += &format!("quad_order = {}\n", self.quad_order);
        s += &format!("tolerance = {}\n", self.tolerance);
        s += &format!("multistarts = {}\n", self.multistarts);
        s += &format!("max_iterations = {}\n", self.max_iterations);
        s += &format!("threshold = {}\n", self.threshold);
        s += &format!("estimator = {}\n", self.estimator.as_str());
        s += &format!("time_nodes = {}\n", self.time_nodes);
        s += &format!("output = {}\n", self.output.display());
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineError {
    /// 1-based line number, 0 for whole-file problems.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub errors: Vec<LineError>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            if e.line == 0 {
                write!(f, "config: {}", e.message)?;
            } else {
                write!(f, "config line {}: {}", e.line, e.message)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

const KEYS: &[&str] = &[
    "k",
    "t",
    "h",
    "h_max",
    "h_points",
    "n_list",
    "n_samples",
    "seed",
    "quad_order",
    "tolerance",
    "multistarts",
    "max_iterations",
    "threshold",
    "estimator",
    "time_nodes",
    "output",
];

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: '{}'", s.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("value must be finite: '{}'", s.trim()))
    }
}

fn parse_list<T>(s: &str, one: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).collect();
    if items.iter().any(|i| i.is_empty()) {
        return Err(format!("malformed list: '{}'", s.trim()));
    }
    items.into_iter().map(one).collect()
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("not a nonnegative integer: '{}'", s.trim()))
}

fn parse_atom(s: &str) -> Result<(Vec<f64>, f64), String> {
    let (coords, weight) = s
        .split_once('@')
        .ok_or_else(|| format!("malformed atom line, expected 'v1,...,vK @ weight': '{}'", s.trim()))?;
    let coords = parse_list(coords, parse_f64).map_err(|e| format!("malformed atom line: {e}"))?;
    let weight = parse_f64(weight).map_err(|e| format!("malformed atom weight: {e}"))?;
    if weight < 0.0 {
        return Err(format!("atom weight must be nonnegative, got {weight}"));
    }
    Ok((coords, weight))
}

/// Parses and validates; all problems are reported together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut errors = Vec::new();
    let mut atoms = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    let mut cfg = ExperimentConfig {
        atoms: Vec::new(),
        k: 0,
        t: vec![0.5],
        h: 0.3,
        h_max: 1.0,
        h_points: 5,
        n_list: vec![2, 4, 8],
        n_samples: 400,
        seed: 1,
        quad_order: 32,
        tolerance: 1e-6,
        multistarts: 16,
        max_iterations: 500,
        threshold: 4.0,
        estimator: Estimator::TimeIntegral,
        time_nodes: 8,
        output: PathBuf::from("."),
    };
    let mut explicit_k = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut err = |m: String| errors.push(LineError { line: line_no, message: m });
        let Some((key, value)) = line.split_once('=') else {
            err(format!("expected 'key = value', got '{line}'"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if key == "atom" {
            match parse_atom(value) {
                Ok(a) => atoms.push((line_no, a)),
                Err(m) => err(m),
            }
            continue;
        }
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            err(format!("unknown key '{key}'"));
            continue;
        };
        if seen.contains(&known) {
            err(format!("duplicate key '{key}'"));
            continue;
        }
        seen.push(known);
        let result: Result<(), String> = (|| {
            match known {
                "k" => explicit_k = Some((line_no, parse_usize(value)?)),
                "t" => cfg.t = parse_list(value, parse_f64)?,
                "h" => cfg.h = parse_f64(value)?,
                "h_max" => cfg.h_max = parse_f64(value)?,
                "h_points" => cfg.h_points = parse_usize(value)?,
                "n_list" => cfg.n_list = parse_list(value, parse_usize)?,
                "n_samples" => cfg.n_samples = parse_usize(value)?,
                "seed" => cfg.seed = value.parse().map_err(|_| format!("not a 64-bit seed: '{value}'"))?,
                "quad_order" => cfg.quad_order = parse_usize(value)?,
                "tolerance" => cfg.tolerance = parse_f64(value)?,
                "multistarts" => cfg.multistarts = parse_usize(value)?,
                "max_iterations" => cfg.max_iterations = parse_usize(value)?,
                "threshold" => cfg.threshold = parse_f64(value)?,
                "estimator" => {
                    cfg.estimator = match value {
                        "direct" => Estimator::Direct,
                        "time-integral" => Estimator::TimeIntegral,
                        _ => return Err(format!("estimator must be 'direct' or 'time-integral', got '{value}'")),
                    }
                }
                "time_nodes" => cfg.time_nodes = parse_usize(value)?,
                "output" => cfg.output = PathBuf::from(value),
                _ => unreachable!("key list and match arms agree"),
            }
            Ok(())
        })();
        if let Err(m) = result {
            err(m);
        }
    }

    let positive = |name: &str, ok: bool, errors: &mut Vec<LineError>| {
        if !ok {
            errors.push(LineError { line: 0, message: format!("{name} out of range") });
        }
    };
    positive("t (must be >= 0)", !cfg.t.is_empty() && cfg.t.iter().all(|v| *v >= 0.0), &mut errors);
    positive("h (must be >= 0)", cfg.h >= 0.0, &mut errors);
    positive("h_max (must be > 0)", cfg.h_max > 0.0, &mut errors);
    positive("h_points (must be >= 2)", cfg.h_points >= 2, &mut errors);
    positive("n_list (entries must be >= 1)", !cfg.n_list.is_empty() && cfg.n_list.iter().all(|n| *n >= 1), &mut errors);
    positive("n_samples (must be >= 2)", cfg.n_samples >= 2, &mut errors);
    positive("quad_order (must be >= 8)", cfg.quad_order >= 8, &mut errors);
    positive("tolerance (must be > 0)", cfg.tolerance > 0.0, &mut errors);
    positive("multistarts (must be >= 1)", cfg.multistarts >= 1, &mut errors);
    positive("max_iterations (must be >= 1)", cfg.max_iterations >= 1, &mut errors);
    positive("threshold (must be > 0)", cfg.threshold > 0.0, &mut errors);
    positive("time_nodes (must be >= 1)", cfg.time_nodes >= 1, &mut errors);

    if atoms.is_empty() {
        errors.push(LineError { line: 0, message: "at least one 'atom = v1,...,vK @ weight' line is required".into() });
    } else {
        let k = atoms[0].1 .0.len();
        for (line, (a, _)) in &atoms {
            if a.len() != k {
                errors.push(LineError { line: *line, message: format!("atom has {} coordinates, expected {k}", a.len()) });
            }
        }
        let total: f64 = atoms.iter().map(|(_, (_, w))| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            errors.push(LineError { line: 0, message: format!("atom weights must sum to 1 within 1e-12, got {total}") });
        }
        if let Some((line, ek)) = explicit_k {
            if ek != k {
                errors.push(LineError { line, message: format!("k = {ek} but atoms have {k} coordinates") });
            }
        }
        cfg.k = k;
        cfg.atoms = atoms.into_iter().map(|(_, a)| a).collect();
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { errors })
    }
}
