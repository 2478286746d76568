use std::fs;
use std::path::{Path, PathBuf};

use qevo::io::MlpArch;
use qevo::netgraph::complexity::{MAX_BITS, MIN_BITS};
use qevo::quantizer::{MAX_TOTAL_BITS, MIN_TOTAL_BITS};
use qevo::Metric;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything a pipeline step needs. Loaded from a TOML or JSON file and
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model the step operates on (float or quantized depending on the step).
    pub model: Option<PathBuf>,
    /// Float reference model: inline ranking, teacher labels, early-stop reference.
    pub float_model: Option<PathBuf>,
    pub schemes: Option<PathBuf>,
    pub ranking: Option<PathBuf>,
    /// One CSV file, or IDX images followed by IDX labels.
    pub data: Vec<PathBuf>,
    pub label_column: String,
    pub feature_columns: Option<Vec<String>>,
    pub num_classes: Option<usize>,
    pub metric: Metric,
    /// Anomaly decision threshold for the f1 metric.
    pub threshold: f64,
    pub total_bits: u32,
    pub sensitivity_bits: u32,
    pub act_bits: u32,
    pub population_size: usize,
    pub iterations: usize,
    pub p: f64,
    pub seed: Option<u64>,
    pub eval_subset_size: Option<usize>,
    pub max_drop: Option<f64>,
    /// Metric the early stop is measured against; defaults to the float model's.
    pub reference_metric: Option<f64>,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub parallel: bool,
    pub arch: Option<MlpArch>,
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            float_model: None,
            schemes: None,
            ranking: None,
            data: Vec::new(),
            label_column: "label".into(),
            feature_columns: None,
            num_classes: None,
            metric: Metric::Top1,
            threshold: 0.5,
            total_bits: 8,
            sensitivity_bits: 4,
            act_bits: 8,
            population_size: 32,
            iterations: 64,
            p: 0.02,
            seed: None,
            eval_subset_size: None,
            max_drop: None,
            reference_metric: None,
            output_dir: PathBuf::from("out"),
            threads: None,
            parallel: true,
            arch: None,
            samples: 2000,
        }
    }
}

impl RunConfig {
    /// Reads `.toml` or `.json`. A run manifest is accepted too, in which
    /// case its recorded config is used.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string())),
            Some("json") => {
                let value: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
                let value = match value.get("config") {
                    Some(inner) if value.get("command").is_some() => inner.clone(),
                    _ => value,
                };
                serde_json::from_value(value).map_err(|e| bad(e.to_string()))
            }
            _ => Err(bad("config files must end in .toml or .json".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        for (what, bits) in [
            ("total_bits", self.total_bits),
            ("sensitivity_bits", self.sensitivity_bits),
        ] {
            if !(MIN_TOTAL_BITS..=MAX_TOTAL_BITS).contains(&bits) {
                return fail(format!(
                    "{what} = {bits} outside [{MIN_TOTAL_BITS}, {MAX_TOTAL_BITS}]"
                ));
            }
        }
        if !(MIN_BITS..=MAX_BITS).contains(&self.act_bits) {
            return fail(format!(
                "act_bits = {} outside [{MIN_BITS}, {MAX_BITS}]",
                self.act_bits
            ));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return fail(format!("p = {} not in (0, 1)", self.p));
        }
        if self.population_size == 0 {
            return fail("population_size must be positive".into());
        }
        if !self.threshold.is_finite() {
            return fail("threshold must be finite".into());
        }
        if let Some(d) = self.max_drop {
            if !(0.0..=1.0).contains(&d) {
                return fail(format!("max_drop = {d} not in [0, 1]"));
            }
        }
        if let Some(r) = self.reference_metric {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("reference_metric = {r} not in [0, 1]"));
            }
        }
        if self.eval_subset_size == Some(0) {
            return fail("eval_subset_size must be positive".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be positive".into());
        }
        if self.samples == 0 {
            return fail("samples must be positive".into());
        }
        Ok(())
    }

    pub(crate) fn require_seed(&self, step: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config(format!("`{step}` needs an explicit --seed")))
    }

    pub(crate) fn require<'a, T>(&self, field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing `{name}`")))
    }
}
