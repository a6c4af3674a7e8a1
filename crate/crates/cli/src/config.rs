//! Run configuration: flat `key = value` text with `#` comments.
//!
//! A run config is the full training configuration plus data paths, the
//! run directory, and evaluation mode flags. Unknown keys are errors, and
//! validation reports every problem at once rather than stopping at the
//! first.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use radd_core::evalrank::{AblationMode, InferenceMode};
use radd_core::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Ema,
    Live,
}

impl WeightSource {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "ema" => Ok(WeightSource::Ema),
            "live" => Ok(WeightSource::Live),
            _ => Err(format!("unknown weight source '{s}' (ema, live)")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightSource::Ema => "ema",
            WeightSource::Live => "live",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub triples_train: PathBuf,
    pub triples_valid: PathBuf,
    pub triples_test: PathBuf,
    pub features_visual: Option<PathBuf>,
    pub features_textual: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub eval_mode: AblationMode,
    pub eval_inference: InferenceMode,
    pub eval_weights: WeightSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            triples_train: PathBuf::new(),
            triples_valid: PathBuf::new(),
            triples_test: PathBuf::new(),
            features_visual: None,
            features_textual: None,
            run_dir: PathBuf::from("runs/radd"),
            eval_mode: AblationMode::Full,
            eval_inference: InferenceMode::SinglePass,
            eval_weights: WeightSource::Ema,
        }
    }
}

fn parse_inference(s: &str) -> Result<InferenceMode, String> {
    match s {
        "single-pass" => Ok(InferenceMode::SinglePass),
        "iterative" => Ok(InferenceMode::Iterative),
        _ => Err(format!("unknown inference mode '{s}' (single-pass, iterative)")),
    }
}

fn inference_name(m: InferenceMode) -> &'static str {
    match m {
        InferenceMode::SinglePass => "single-pass",
        InferenceMode::Iterative => "iterative",
    }
}

impl RunConfig {
    /// Parses and validates, collecting every error.
    pub fn load(path: &Path) -> Result<RunConfig, Vec<String>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return Err(vec![format!("cannot read {}: {e}", path.display())]),
        };
        let mut cfg = RunConfig::default();
        let mut errors = Vec::new();
        let mut saw = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !saw.insert(key.to_owned()) {
                errors.push(format!("line {}: duplicate key '{key}'", lineno + 1));
                continue;
            }
            if let Err(e) = cfg.set_key(key, value) {
                errors.push(format!("line {}: {e}", lineno + 1));
            }
        }
        cfg.validate_paths(&mut errors);
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "triples_train" => self.triples_train = value.into(),
            "triples_valid" => self.triples_valid = value.into(),
            "triples_test" => self.triples_test = value.into(),
            "features_visual" => self.features_visual = Some(value.into()),
            "features_textual" => self.features_textual = Some(value.into()),
            "run_dir" => self.run_dir = value.into(),
            "eval_mode" => self.eval_mode = AblationMode::parse(value).map_err(|e| e.to_string())?,
            "eval_inference" => self.eval_inference = parse_inference(value)?,
            "eval_weights" => self.eval_weights = WeightSource::parse(value)?,
            _ => {
                self.train
                    .set_key(key, value)
                    .map_err(|e| match e {
                        radd_core::RaddError::Config(msg) => msg,
                        other => other.to_string(),
                    })?;
            }
        }
        Ok(())
    }

    fn validate_paths(&self, errors: &mut Vec<String>) {
        let mut need = |name: &str, p: &PathBuf| {
            if p.as_os_str().is_empty() {
                errors.push(format!("missing required key '{name}'"));
            } else if !p.exists() {
                errors.push(format!("{name} path does not exist: {}", p.display()));
            }
        };
        need("triples_train", &self.triples_train);
        need("triples_valid", &self.triples_valid);
        need("triples_test", &self.triples_test);
        for (name, p) in [
            ("features_visual", &self.features_visual),
            ("features_textual", &self.features_textual),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    errors.push(format!("{name} path does not exist: {}", p.display()));
                }
            }
        }
        if !self.train.structure_only
            && (self.features_visual.is_none() || self.features_textual.is_none())
        {
            errors.push(
                "features_visual and features_textual are required unless structure_only = true"
                    .into(),
            );
        }
    }

    /// Frozen echo of every effective value, defaults included.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# resolved run configuration");
        let _ = writeln!(out, "triples_train={}", self.triples_train.display());
        let _ = writeln!(out, "triples_valid={}", self.triples_valid.display());
        let _ = writeln!(out, "triples_test={}", self.triples_test.display());
        if let Some(p) = &self.features_visual {
            let _ = writeln!(out, "features_visual={}", p.display());
        }
        if let Some(p) = &self.features_textual {
            let _ = writeln!(out, "features_textual={}", p.display());
        }
        let _ = writeln!(out, "run_dir={}", self.run_dir.display());
        let _ = writeln!(out, "eval_mode={}", self.eval_mode.name());
        let _ = writeln!(out, "eval_inference={}", inference_name(self.eval_inference));
        let _ = writeln!(out, "eval_weights={}", self.eval_weights.name());
        out.push_str(&self.train.to_kv());
        out
    }
}
