//! Experiment configuration in TOML.
//!
//! Every section is read strictly: unknown keys are rejected, and each error
//! names the full dotted key together with its line in the source text.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::lqt::LqtWeights;
use crate::numeric::{max_asymmetry, min_eig_sym, Mat, Vector};
use crate::plant::{ExoSignal, PlantSpec, ReferenceModel, Sinusoid};

/// The shipped configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config error")?;
        if let Some(line) = self.line {
            write!(f, " (line {line})")?;
        }
        f.write_str(": ")?;
        if let Some(key) = &self.key {
            write!(f, "{key} ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialEstimate {
    /// `Θ̂(0) = scale·Θ` (needs the true parameters; simulation only).
    Scale(f64),
    /// Explicit `n_u × (n_x + 2n_u)` matrix.
    Explicit(Mat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerConfig {
    pub gamma: f64,
    pub beta: f64,
    pub q_lyap: Mat,
    pub init: InitialEstimate,
    pub pe_window: f64,
    pub pe_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub step: f64,
    pub t_adapt: f64,
    pub t_mpc: f64,
    pub sample_interval: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub reference: ReferenceModel,
    pub weights: LqtWeights,
    pub exo: ExoSignal,
    pub tuner: TunerConfig,
    pub schedule: Schedule,
    pub output: OutputConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            key: None,
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        parse(&text)
    }

    pub fn shipped() -> Self {
        parse(DEFAULT_CONFIG).expect("shipped configuration is valid")
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, or of the section header when the key
/// is absent (or `None`).
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(key) = key {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

struct Section<'a> {
    name: &'a str,
    table: Option<&'a Table>,
    text: &'a str,
    seen: Vec<&'a str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, text: &'a str, name: &'a str) -> Result<Self> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                return Err(ConfigError {
                    key: Some(name.into()),
                    line: locate(text, "", Some(name)),
                    message: "must be a table".into(),
                })
            }
        };
        Ok(Self {
            name,
            table,
            text,
            seen: Vec::new(),
        })
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            key: Some(format!("{}.{key}", self.name)),
            line: locate(self.text, self.name, Some(key)),
            message: message.into(),
        }
    }

    fn get(&mut self, key: &'a str) -> Option<&'a Value> {
        self.seen.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn require(&mut self, key: &'a str) -> Result<&'a Value> {
        self.get(key).ok_or_else(|| self.err(key, "is missing"))
    }

    fn number(&self, key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(x) => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err(key, "must be a number")),
        }
    }

    fn f64(&mut self, key: &'a str) -> Result<f64> {
        let v = self.require(key)?;
        self.number(key, v)
    }

    fn f64_or(&mut self, key: &'a str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => self.number(key, v),
            None => Ok(default),
        }
    }

    fn positive(&mut self, key: &'a str, default: Option<f64>) -> Result<f64> {
        let x = match default {
            Some(d) => self.f64_or(key, d)?,
            None => self.f64(key)?,
        };
        if !(x > 0.0) || !x.is_finite() {
            return Err(self.err(key, format!("must be positive, got {x}")));
        }
        Ok(x)
    }

    fn list(&self, key: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
        v.as_array().ok_or_else(|| self.err(key, "must be a list"))
    }

    fn numbers(&self, key: &str, v: &'a Value) -> Result<Vec<f64>> {
        self.list(key, v)?.iter().map(|x| self.number(key, x)).collect()
    }

    fn vector(&mut self, key: &'a str, len: Option<usize>) -> Result<Vector> {
        let v = self.require(key)?;
        let xs = self.numbers(key, v)?;
        if let Some(n) = len {
            if xs.len() != n {
                return Err(self.err(key, format!("must have {n} entries, got {}", xs.len())));
            }
        }
        Ok(Vector::from_vec(xs))
    }

    fn matrix_value(&self, key: &str, v: &'a Value, shape: Option<(usize, usize)>) -> Result<Mat> {
        let rows = self.list(key, v)?;
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| self.numbers(key, r)).collect::<Result<_>>()?;
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return Err(self.err(key, "must be a non-empty list of equal-length rows"));
        }
        if let Some((r, c)) = shape {
            if (r, c) != (n_rows, n_cols) {
                return Err(self.err(key, format!("must be {r}x{c}, got {n_rows}x{n_cols}")));
            }
        }
        Ok(Mat::from_row_iterator(n_rows, n_cols, rows.into_iter().flatten()))
    }

    fn matrix(&mut self, key: &'a str, shape: Option<(usize, usize)>) -> Result<Mat> {
        let v = self.require(key)?;
        self.matrix_value(key, v, shape)
    }

    fn optional_matrix(&mut self, key: &'a str, shape: (usize, usize)) -> Result<Option<Mat>> {
        match self.get(key) {
            Some(v) => self.matrix_value(key, v, Some(shape)).map(Some),
            None => Ok(None),
        }
    }

    fn psd(&self, key: &str, m: &Mat, strict: bool) -> Result<()> {
        if max_asymmetry(m) > 1e-9 * m.amax().max(1.0) {
            return Err(self.err(key, "not symmetric"));
        }
        let min = min_eig_sym(m).map_err(|e| self.err(key, e.to_string()))?;
        if strict && !(min > 0.0) {
            return Err(self.err(key, "not positive definite"));
        }
        if min < -1e-12 * m.amax().max(1.0) {
            return Err(self.err(key, "not PSD"));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !self.seen.contains(&k.as_str())) {
                return Err(self.err(k, "is not a recognised key"));
            }
        }
        Ok(())
    }
}

fn parse(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        key: None,
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    const SECTIONS: [&str; 7] = ["plant", "reference", "weights", "exo", "tuner", "schedule", "output"];
    if let Some(k) = root
        .keys()
        .find(|k| k.as_str() != "seed" && !SECTIONS.contains(&k.as_str()))
    {
        return Err(ConfigError {
            key: Some(k.clone()),
            line: locate(text, k, None).or_else(|| locate(text, "", Some(k))),
            message: "is not a recognised section".into(),
        });
    }

    let mut s = Section::new(&root, text, "plant")?;
    let a = s.matrix("A", None)?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(s.err("A", "must be square"));
    }
    let b = s.matrix("B", None)?;
    if b.nrows() != n {
        return Err(s.err("B", format!("must have {n} rows, got {}", b.nrows())));
    }
    let m = b.ncols();
    let lambda = s.vector("lambda", Some(m))?;
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return Err(s.err("lambda", "entries must be positive"));
    }
    let u_max = s.positive("u_max", None)?;
    let x0 = s.vector("x0", Some(n))?;
    let plant = PlantSpec::new(a, b, lambda, u_max, x0).map_err(|e| s.err("A", e.to_string()))?;
    s.finish()?;

    let mut s = Section::new(&root, text, "reference")?;
    let a_m = s.matrix("A", Some((n, n)))?;
    let b_m = s.matrix("B", Some((n, m)))?;
    let reference = ReferenceModel::new(a_m, b_m).map_err(|e| s.err("A", e.to_string()))?;
    s.finish()?;

    let mut s = Section::new(&root, text, "weights")?;
    let q = s.matrix("Q", Some((n, n)))?;
    s.psd("Q", &q, false)?;
    let r = s.matrix("R", Some((m, m)))?;
    s.psd("R", &r, true)?;
    let q_f = s.optional_matrix("Q_f", (n, n))?.unwrap_or_else(|| Mat::zeros(n, n));
    s.psd("Q_f", &q_f, false)?;
    let weights = LqtWeights::new(q, r, q_f).map_err(|e| s.err("Q", e.to_string()))?;
    if !weights.has_scalar_r() {
        return Err(s.err("R", "must be a positive multiple of the identity"));
    }
    s.finish()?;

    let mut s = Section::new(&root, text, "exo")?;
    let raw = s.require("channels")?;
    let channels = s.list("channels", raw)?;
    if channels.len() != n {
        return Err(s.err("channels", format!("must list {n} channels, got {}", channels.len())));
    }
    let channels = channels
        .iter()
        .map(|ch| {
            s.list("channels", ch)?
                .iter()
                .map(|term| match s.numbers("channels", term)?.as_slice() {
                    &[amp, omega, phase] => Ok(Sinusoid::new(amp, omega, phase)),
                    _ => Err(s.err("channels", "terms must be [amplitude, omega, phase]")),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let exo = ExoSignal::new(channels).map_err(|e| s.err("channels", e.to_string()))?;
    s.finish()?;

    let mut s = Section::new(&root, text, "tuner")?;
    let gamma = s.positive("gamma", Some(1.0))?;
    let beta = s.positive("beta", Some(1.0))?;
    let q_lyap = s
        .optional_matrix("Q_lyap", (n, n))?
        .unwrap_or_else(|| Mat::identity(n, n) * 2.0);
    s.psd("Q_lyap", &q_lyap, true)?;
    let scale = s.get("init_scale");
    let explicit = s.optional_matrix("init_theta", (m, n + 2 * m))?;
    let init = match (scale, explicit) {
        (Some(_), Some(_)) => {
            return Err(s.err("init_theta", "conflicts with tuner.init_scale; give only one"))
        }
        (_, Some(theta)) => InitialEstimate::Explicit(theta),
        (Some(v), None) => InitialEstimate::Scale(s.number("init_scale", v)?),
        (None, None) => InitialEstimate::Scale(0.8),
    };
    let pe_window = s.positive("pe_window", Some(2.0 * PI))?;
    let pe_alpha = s.f64_or("pe_alpha", 0.1)?;
    s.finish()?;
    let tuner = TunerConfig {
        gamma,
        beta,
        q_lyap,
        init,
        pe_window,
        pe_alpha,
    };

    let mut s = Section::new(&root, text, "schedule")?;
    let step = s.positive("step", Some(1e-3))?;
    let t_adapt = s.f64_or("t_adapt", 32.0 * PI)?;
    if !(t_adapt >= 0.0) {
        return Err(s.err("t_adapt", "must not be negative"));
    }
    let t_mpc = s.f64_or("t_mpc", 8.0)?;
    if !(t_mpc >= 0.0) {
        return Err(s.err("t_mpc", "must not be negative"));
    }
    let sample_interval = s.positive("sample_interval", Some(0.1))?;
    let horizon = s.positive("horizon", Some(2.0))?;
    if sample_interval > horizon {
        return Err(s.err("sample_interval", "must not exceed schedule.horizon"));
    }
    let ratio = sample_interval / step;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(s.err("sample_interval", "must be a multiple of schedule.step"));
    }
    s.finish()?;
    let schedule = Schedule {
        step,
        t_adapt,
        t_mpc,
        sample_interval,
        horizon,
    };

    let mut s = Section::new(&root, text, "output")?;
    let dir = match s.get("dir") {
        Some(Value::String(d)) => PathBuf::from(d),
        Some(_) => return Err(s.err("dir", "must be a string")),
        None => PathBuf::from("out"),
    };
    let plots = match s.get("plots") {
        Some(Value::Boolean(b)) => *b,
        Some(_) => return Err(s.err("plots", "must be true or false")),
        None => true,
    };
    s.finish()?;
    let output = OutputConfig { dir, plots };

    let seed = match root.get("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => {
            return Err(ConfigError {
                key: Some("seed".into()),
                line: locate(text, "", Some("seed")),
                message: "must be a non-negative integer".into(),
            })
        }
    };

    Ok(ExperimentConfig {
        plant,
        reference,
        weights,
        exo,
        tuner,
        schedule,
        output,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_of(text: &str) -> ConfigError {
        ExperimentConfig::from_toml(text).unwrap_err()
    }

    #[test]
    fn shipped_config_has_the_reference_values() {
        let cfg = ExperimentConfig::shipped();
        let m = |v: &[f64]| Mat::from_row_slice(2, 2, v);
        assert_eq!(cfg.plant.a, m(&[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(cfg.plant.b, Mat::identity(2, 2));
        assert_eq!(cfg.plant.lambda, Vector::from_vec(vec![1.0, 1.0]));
        assert_eq!(cfg.plant.u_max, 8.0);
        assert_eq!(cfg.plant.x0, Vector::zeros(2));
        assert_eq!(cfg.reference.a, m(&[-1.0, 1.0, 0.0, -2.0]));
        assert_eq!(cfg.weights.q, Mat::identity(2, 2) * 20.0);
        assert_eq!(cfg.weights.r, Mat::identity(2, 2));
        assert_eq!(cfg.tuner.init, InitialEstimate::Scale(0.8));
        assert_eq!(cfg.schedule.t_adapt, 32.0 * PI);
        assert_eq!(cfg.schedule.t_mpc, 8.0);
        let omegas: Vec<Vec<f64>> = cfg
            .exo
            .channels()
            .iter()
            .map(|c| c.iter().map(|s| s.omega).collect())
            .collect();
        assert_eq!(omegas, vec![vec![1.0, 3.0, 5.0, 7.0], vec![2.0, 4.0, 6.0]]);
    }

    #[test]
    fn missing_u_max_is_named() {
        let text = DEFAULT_CONFIG.replace("u_max = 8.0\n", "");
        let err = err_of(&text);
        assert_eq!(err.key.as_deref(), Some("plant.u_max"));
        assert!(err.to_string().contains("plant.u_max"));
    }

    #[test]
    fn indefinite_q_is_rejected_with_its_line() {
        let text = DEFAULT_CONFIG.replace("Q = [[20.0, 0.0], [0.0, 20.0]]", "Q = [[20.0, 0.0], [0.0, -1.0]]");
        let err = err_of(&text);
        assert!(err.to_string().contains("weights.Q not PSD"), "{err}");
        let line = text.lines().position(|l| l.starts_with("Q = ")).unwrap() + 1;
        assert_eq!(err.line, Some(line));
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let err = err_of(&DEFAULT_CONFIG.replace("[schedule]", "[schedule]\nstpe = 0.01"));
        assert_eq!(err.key.as_deref(), Some("schedule.stpe"));
        let err = err_of(&format!("{DEFAULT_CONFIG}\n[extras]\nx = 1\n"));
        assert_eq!(err.key.as_deref(), Some("extras"));
    }

    #[test]
    fn dimension_errors_are_located() {
        let err = err_of(&DEFAULT_CONFIG.replace("x0 = [0.0, 0.0]", "x0 = [0.0, 0.0, 1.0]"));
        assert_eq!(err.key.as_deref(), Some("plant.x0"));
        assert!(err.line.is_some());
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = err_of("[plant]\nA = [[1.0, 1.0]\n");
        assert!(err.line.is_some());
        assert!(err.key.is_none());
    }

    #[test]
    fn explicit_initializer_conflicts_with_scale() {
        let text = DEFAULT_CONFIG.replace(
            "init_scale = 0.8",
            "init_scale = 0.8\ninit_theta = [[0.0, 0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]]",
        );
        assert_eq!(err_of(&text).key.as_deref(), Some("tuner.init_theta"));
    }
}
