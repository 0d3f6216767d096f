//! Run configuration: a TOML (or JSON) file, overridable by dotted-path
//! `key=value` pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    WardC,
    RpsFilter,
    SundayRps,
    WedgeQrps,
    VeeQrps,
    BlackBox,
    CrystalBallSignalling,
}

impl ScenarioKind {
    pub fn id(self) -> &'static str {
        match self {
            ScenarioKind::WardC => "ward_c",
            ScenarioKind::RpsFilter => "rps_filter",
            ScenarioKind::SundayRps => "sunday_rps",
            ScenarioKind::WedgeQrps => "wedge_qrps",
            ScenarioKind::VeeQrps => "vee_qrps",
            ScenarioKind::BlackBox => "black_box",
            ScenarioKind::CrystalBallSignalling => "crystal_ball_signalling",
        }
    }

    /// Scenarios whose size is a number of kept rounds rather than trials.
    pub fn counts_kept(self) -> bool {
        matches!(self, ScenarioKind::RpsFilter | ScenarioKind::WedgeQrps)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Singlet,
    Product,
    Custom,
}

/// Scenario parameters. Each scenario reads the keys it needs and rejects
/// the ones it does not.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_bob_win: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_other: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alice_angles_deg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bob_angles_deg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alice_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bob_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetKind>,
    /// Canonical-order rows `[p++, p+-, p-+, p--]`, row-major over
    /// `(setting_a, setting_b)`. Used with `target = "custom"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rows: Option<Vec<[f64; 4]>>,
    /// Setting indices `[a0, a1, b0, b1]` for the CHSH combination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chsh: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knob: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_trials: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rounds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_kept: Option<u64>,
    #[serde(default)]
    pub output_format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default)]
    pub emit_raw: bool,
    #[serde(default)]
    pub params: Params,
}

impl RunConfig {
    /// Parses a config tree, naming the offending key on failure.
    pub fn from_value(tree: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "config".to_string() } else { path };
            ConfigError::new(key, e.into_inner().to_string())
        })
    }

    /// Reads a TOML config, a JSON config, or a JSON report (whose
    /// `manifest.config` is used).
    pub fn load_tree(path: &Path) -> Result<Value, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        parse_tree(&text, path.extension().and_then(|s| s.to_str()) == Some("json"))
    }

    /// Size of the run, enforcing that exactly the right one of
    /// `n_rounds` / `n_kept` is present.
    pub fn size(&self) -> Result<usize, ConfigError> {
        let (want, other, value, stray) = if self.scenario.counts_kept() {
            ("n_kept", "n_rounds", self.n_kept, self.n_rounds)
        } else {
            ("n_rounds", "n_kept", self.n_rounds, self.n_kept)
        };
        if stray.is_some() {
            return Err(ConfigError::new(
                other,
                format!("not used by scenario `{}` (set `{want}` instead)", self.scenario.id()),
            ));
        }
        match value {
            None => Err(ConfigError::new(want, format!("required by scenario `{}`", self.scenario.id()))),
            Some(0) => Err(ConfigError::new(want, "must be positive")),
            Some(n) => usize::try_from(n).map_err(|_| ConfigError::new(want, "too large")),
        }
    }
}

/// Text to a config tree. JSON reports are unwrapped to their config.
pub fn parse_tree(text: &str, json: bool) -> Result<Value, ConfigError> {
    let tree: Value = if json {
        serde_json::from_str(text).map_err(|e| ConfigError::new("--config", format!("invalid JSON: {e}")))?
    } else {
        toml::from_str(text).map_err(|e| ConfigError::new("--config", format!("invalid TOML: {e}")))?
    };
    match tree.get("manifest").and_then(|m| m.get("config")) {
        Some(config) => Ok(config.clone()),
        None => Ok(tree),
    }
}

/// Applies `key.path=value`. The value is parsed as a TOML value (numbers,
/// booleans, arrays, quoted strings); anything else is taken as a bare
/// string.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new("--set", format!("expected key=value, got `{assignment}`")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::new("--set", format!("malformed key `{key}`")));
    }
    let value = parse_scalar(raw.trim());
    let mut node = tree;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            return Err(ConfigError::new(key, "parent is not a table"));
        }
        let map = node.as_object_mut().expect("checked object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => Value::String(raw.to_string()),
    }
}
