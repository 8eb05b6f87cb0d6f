//! Run configuration: one JSON document resolved against a named preset.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::sha256_hex;
use crate::encoder::Hyperparams;
use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::simulator::{CohortConfig, HmiConfig, ScenarioConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected desk or paper)"
            ))),
        }
    }
}

/// Floating-point type the encoder is trained and evaluated in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Root of every random stream in the run.
    pub seed: u64,
    pub precision: Precision,
    pub scenario: ScenarioConfig,
    pub cohort: CohortConfig,
    pub lap_plan: Vec<HmiConfig>,
    pub hyperparams: Hyperparams,
    pub eval: EvalParams,
}

impl RunConfig {
    /// Both presets share the crossover scenario and the 27-subject,
    /// five-lap cohort; they differ in the training profile.
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            seed: 0,
            precision: Precision::F64,
            scenario: ScenarioConfig::crossover(),
            cohort: CohortConfig::default(),
            lap_plan: HmiConfig::default_plan(),
            hyperparams: match preset {
                Preset::Desk => Hyperparams::desk(),
                Preset::Paper => Hyperparams::paper(),
            },
            eval: EvalParams::default(),
        }
    }

    /// Resolves `json` over the preset it names, or over `preset_override`
    /// when given. Keys present in the document replace preset values;
    /// objects merge recursively, arrays are replaced whole. Unknown keys are
    /// rejected.
    pub fn from_json_str(json: &str, preset_override: Option<Preset>) -> Result<Self> {
        let doc: Value =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(doc, preset_override)
    }

    pub fn from_value(mut doc: Value, preset_override: Option<Preset>) -> Result<Self> {
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(p) = preset_override {
            obj.insert("preset".into(), serde_json::to_value(p)?);
        }
        let preset = match obj.get("preset") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("preset: {e}")))?,
            None => Preset::Desk,
        };
        let mut base = serde_json::to_value(Self::preset(preset))?;
        merge(&mut base, doc);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.cohort.n_subjects < 2 {
            return Err(Error::Config(format!(
                "cohort.n_subjects must be >= 2, got {}",
                self.cohort.n_subjects
            )));
        }
        self.cohort.factors.validate()?;
        self.cohort.mapping.validate()?;
        if self.lap_plan.is_empty() {
            return Err(Error::Config("lap_plan must be non-empty".into()));
        }
        self.hyperparams.validate()?;
        self.eval.svr.validate()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must be non-empty".into()));
        }
        if !(self.eval.window_seconds > 0.0) {
            return Err(Error::Config("eval.window_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Pretty JSON with a trailing newline; the form written next to outputs.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// SHA-256 of [`RunConfig::to_json`].
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    /// Steps per snippet window.
    pub fn context_len(&self) -> usize {
        self.scenario.context_len(self.hyperparams.context_seconds)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
