//! Flat `key=value` run configuration.
//!
//! One assignment per line, `#` starts a comment, keys carry a section
//! prefix (`ts.`, `optim.`, `sam.`, `sweep.`, `diag.`, `output.`). Every key
//! has a default; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use samrank_core::diagnostics::ActivityMode;
use samrank_core::experiments::{RunSettings, SweepSpec, TeacherStudentSpec};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub ts: TeacherStudentSpec,
    pub run: RunSettings,
    pub rho_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sweep = SweepSpec::default();
        Self {
            ts: TeacherStudentSpec::default(),
            run: RunSettings::default(),
            rho_grid: sweep.rho_grid,
            seeds: sweep.seeds,
            jobs: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, ": key `{key}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;
type Getter = fn(&RunConfig) -> String;

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn real(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not a finite number"))
    }
}

fn parsed<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.trim().parse().map_err(|e: T::Err| e.to_string())
}

fn flag(v: &str) -> Result<bool, String> {
    match v.trim() {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected on/off or true/false, got `{other}`")),
    }
}

pub fn parse_reals(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(real).collect()
}

fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(num).collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

/// Every configuration key with its parser and canonical printer, in the
/// order used for the resolved dump.
const KEYS: &[(&str, Setter, Getter)] = &[
    ("ts.d_in", |c, v| { c.ts.d_in = num(v)?; Ok(()) }, |c| c.ts.d_in.to_string()),
    ("ts.teacher_neurons", |c, v| { c.ts.teacher_neurons = num(v)?; Ok(()) }, |c| c.ts.teacher_neurons.to_string()),
    ("ts.student_neurons", |c, v| { c.ts.student_neurons = num(v)?; Ok(()) }, |c| c.ts.student_neurons.to_string()),
    ("ts.n_train", |c, v| { c.ts.n_train = num(v)?; Ok(()) }, |c| c.ts.n_train.to_string()),
    ("ts.n_test", |c, v| { c.ts.n_test = num(v)?; Ok(()) }, |c| c.ts.n_test.to_string()),
    ("ts.teacher_init_std", |c, v| { c.ts.teacher_init_std = real(v)?; Ok(()) }, |c| c.ts.teacher_init_std.to_string()),
    ("ts.student_init_std", |c, v| { c.ts.student_init_std = real(v)?; Ok(()) }, |c| c.ts.student_init_std.to_string()),
    ("ts.activation", |c, v| { c.ts.activation = parsed(v)?; Ok(()) }, |c| c.ts.activation.to_string()),
    ("ts.inputs", |c, v| { c.ts.inputs = parsed(v)?; Ok(()) }, |c| c.ts.inputs.name().to_string()),
    ("ts.input_scale", |c, v| { c.ts.input_scale = real(v)?; Ok(()) }, |c| c.ts.input_scale.to_string()),
    ("ts.student_biases", |c, v| { c.ts.student_biases = flag(v)?; Ok(()) }, |c| c.ts.student_biases.to_string()),
    ("ts.seed", |c, v| { c.ts.seed = num(v)?; Ok(()) }, |c| c.ts.seed.to_string()),
    ("optim.learning_rate", |c, v| { c.run.optim.learning_rate = real(v)?; Ok(()) }, |c| c.run.optim.learning_rate.to_string()),
    ("optim.weight_decay", |c, v| { c.run.optim.weight_decay = real(v)?; Ok(()) }, |c| c.run.optim.weight_decay.to_string()),
    ("optim.batch_size", |c, v| { c.run.optim.batch_size = num(v)?; Ok(()) }, |c| c.run.optim.batch_size.to_string()),
    ("optim.steps", |c, v| { c.run.optim.steps = num(v)?; Ok(()) }, |c| c.run.optim.steps.to_string()),
    ("optim.seed", |c, v| { c.run.optim.seed = num(v)?; Ok(()) }, |c| c.run.optim.seed.to_string()),
    ("sam.method", |c, v| { c.run.method = parsed(v)?; Ok(()) }, |c| c.run.method.to_string()),
    ("sam.rho", |c, v| { c.run.sam.rho = real(v)?; Ok(()) }, |c| c.run.sam.rho.to_string()),
    ("sam.active_fraction", |c, v| { c.run.sam.active_fraction = real(v)?; Ok(()) }, |c| c.run.sam.active_fraction.to_string()),
    ("sam.norm_epsilon", |c, v| { c.run.sam.norm_epsilon = real(v)?; Ok(()) }, |c| c.run.sam.norm_epsilon.to_string()),
    ("sweep.rho_grid", |c, v| { c.rho_grid = parse_reals(v)?; Ok(()) }, |c| join(&c.rho_grid)),
    ("sweep.seeds", |c, v| { c.seeds = parse_seeds(v)?; Ok(()) }, |c| join(&c.seeds)),
    ("sweep.jobs", |c, v| { c.jobs = num(v)?; Ok(()) }, |c| c.jobs.to_string()),
    ("diag.cadence", |c, v| { c.run.cadence = num(v)?; Ok(()) }, |c| c.run.cadence.to_string()),
    ("diag.thresholds", |c, v| { c.run.diag.thresholds = parse_reals(v)?; Ok(()) }, |c| join(&c.run.diag.thresholds)),
    ("diag.center", |c, v| { c.run.diag.center = flag(v)?; Ok(()) }, |c| on_off(c.run.diag.center)),
    (
        "diag.knn_k",
        |c, v| {
            c.run.diag.knn_k = match v.trim() {
                "off" => None,
                k => Some(num(k)?),
            };
            Ok(())
        },
        |c| c.run.diag.knn_k.map_or("off".to_string(), |k| k.to_string()),
    ),
    ("diag.activity", |c, v| { c.run.diag.activity = parsed::<ActivityMode>(v)?; Ok(()) }, |c| c.run.diag.activity.to_string()),
    ("output.dir", |c, v| Ok(c.output_dir = PathBuf::from(v.trim())), |c| c.output_dir.display().to_string()),
];

/// Keys that do not change any computed number.
const NON_SEMANTIC: &[&str] = &["sweep.jobs", "output.dir"];

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _, _)| *k)
    }

    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let (_, setter, _) = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| "unknown key".to_string())?;
        setter(self, value)
    }

    pub fn parse_str(text: &str, source: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: Option<&str>, message: String| ConfigError {
                source: source.to_string(),
                line: Some(line_no),
                key: key.map(str::to_string),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(None, format!("expected key=value, found `{line}`")))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(err(Some(key), format!("already set on line {prev}")));
            }
            cfg.set(key, value).map_err(|m| err(Some(key), m))?;
        }
        cfg.validate().map_err(|message| ConfigError {
            source: source.to_string(),
            line: None,
            key: None,
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: path.display().to_string(),
            line: None,
            key: None,
            message: format!("cannot read config file: {e}"),
        })?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.ts.validate().map_err(|e| e.to_string())?;
        self.run.optim.validate().map_err(|e| e.to_string())?;
        self.run.sam.validate().map_err(|e| e.to_string())?;
        if let Some(t) = self.run.diag.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(format!("diag.thresholds: {t} is outside (0, 1]"));
        }
        if self.run.diag.thresholds.is_empty() {
            return Err("diag.thresholds must not be empty".into());
        }
        if self.run.diag.knn_k == Some(0) {
            return Err("diag.knn_k must be >= 1 or off".into());
        }
        self.sweep_spec().validate().map_err(|e| format!("sweep: {e}"))?;
        if self.jobs == 0 {
            return Err("sweep.jobs must be >= 1".into());
        }
        Ok(())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            rho_grid: self.rho_grid.clone(),
            seeds: self.seeds.clone(),
            optimizer: self.run.method,
            steps: self.run.optim.steps,
            cadence: self.run.cadence,
        }
    }

    /// Every key with its effective value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|(k, _, get)| (k.to_string(), get(self))).collect()
    }

    /// Canonical `key=value` text, in key-table order.
    pub fn canonical_text(&self) -> String {
        KEYS.iter().map(|(k, _, get)| format!("{k}={}\n", get(self))).collect()
    }

    /// SHA-256 of the canonical text of every key that affects results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, _, get) in KEYS {
            if !NON_SEMANTIC.contains(k) {
                h.update(format!("{k}={}\n", get(self)));
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use samrank_core::optim::Method;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::parse_str(&cfg.canonical_text(), "canonical").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn parses_assignments_and_comments() {
        let text = "# header\nsam.rho = 0.6\nsam.method=gradreg # inline\n\nsweep.rho_grid=0,0.6\ndiag.center=off\ndiag.knn_k=off\n";
        let cfg = RunConfig::parse_str(text, "t").unwrap();
        assert_eq!(cfg.run.sam.rho, 0.6);
        assert_eq!(cfg.run.method, Method::GradReg);
        assert_eq!(cfg.rho_grid, vec![0.0, 0.6]);
        assert!(!cfg.run.diag.center);
        assert_eq!(cfg.run.diag.knn_k, None);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::parse_str("sam.rho=0.1\nsam.rhoo=0.2\n", "my.cfg").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert_eq!(err.key.as_deref(), Some("sam.rhoo"));
        assert!(err.to_string().starts_with("my.cfg:2: key `sam.rhoo`"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse_str("sam.rho=abc\n", "t").is_err());
        assert!(RunConfig::parse_str("sam.rho=-1\n", "t").is_err());
        assert!(RunConfig::parse_str("sam.rho=0.1\nsam.rho=0.2\n", "t").is_err());
        assert!(RunConfig::parse_str("no equals sign\n", "t").is_err());
        assert!(RunConfig::parse_str("diag.thresholds=0.5,1.5\n", "t").is_err());
        assert!(RunConfig::parse_str("ts.activation=sigmoid\n", "t").is_err());
        assert!(RunConfig::parse_str("sweep.seeds=\n", "t").is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        b.jobs = 4;
        assert_eq!(a.hash(), b.hash());
        b.run.sam.rho = 0.3;
        assert_ne!(a.hash(), b.hash());
    }
}
