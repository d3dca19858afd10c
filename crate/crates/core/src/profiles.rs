//! Built-in benchmark profiles and run settings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::stats;

/// Confidence level used when a settings file leaves `min_query_count` unset.
pub const DEFAULT_CONFIDENCE: f64 = 0.99;
pub const DESK_MIN_DURATION_NS: u64 = 60_000_000_000;
pub const SUBMISSION_MIN_DURATION_NS: u64 = 600_000_000_000;
pub const DEFAULT_STORE_SIZE: usize = 8;
pub const DEFAULT_SUT_ENDPOINT: &str = "sim:fixed:10ms";

/// Per-workload constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkProfile {
    pub name: String,
    pub inputs_per_query: usize,
    pub input_width_px: usize,
    pub input_height_px: usize,
    /// Tail percentile as a fraction, e.g. 0.999.
    pub tail_percentile: f64,
    /// Minimum fraction of the FP32 reference accuracy.
    pub accuracy_constraint: f64,
    pub constant_stream_hz: Option<f64>,
    /// Target SAE level. Metadata only.
    pub sae_level_note: String,
    /// FP32 reference accuracy, when one is published.
    pub reference_metric: Option<f64>,
}

impl BenchmarkProfile {
    /// Bytes of one synthetic RGB input at the profile resolution.
    pub fn default_sample_bytes(&self) -> usize {
        self.input_width_px * self.input_height_px * 3
    }
}

pub fn builtin_profiles() -> Vec<BenchmarkProfile> {
    vec![
        BenchmarkProfile {
            name: "bevformer_tiny".into(),
            inputs_per_query: 6,
            input_width_px: 800,
            input_height_px: 450,
            tail_percentile: 0.999,
            accuracy_constraint: 0.99,
            constant_stream_hz: Some(12.0),
            sae_level_note: ">=3".into(),
            reference_metric: None,
        },
        BenchmarkProfile {
            name: "deeplabv3plus".into(),
            inputs_per_query: 1,
            input_width_px: 3840,
            input_height_px: 2160,
            tail_percentile: 0.999,
            accuracy_constraint: 0.999,
            constant_stream_hz: Some(15.0),
            sae_level_note: "<=3".into(),
            reference_metric: None,
        },
        BenchmarkProfile {
            name: "ssd_resnet50".into(),
            inputs_per_query: 1,
            input_width_px: 3840,
            input_height_px: 2160,
            tail_percentile: 0.999,
            accuracy_constraint: 0.999,
            constant_stream_hz: Some(15.0),
            sae_level_note: "<3".into(),
            // best SSD variant mAP on the synthetic driving set
            reference_metric: Some(0.7141),
        },
    ]
}

/// Looks up a built-in profile by canonical name or short alias.
pub fn find_profile(name: &str) -> Option<BenchmarkProfile> {
    let canonical = match name.to_ascii_lowercase().as_str() {
        "bevformer" | "bevformer_tiny" | "bevformer-tiny" => "bevformer_tiny",
        "ssd" | "ssd_resnet50" | "ssd-resnet50" => "ssd_resnet50",
        "deeplab" | "deeplabv3" | "deeplabv3plus" | "deeplabv3+" => "deeplabv3plus",
        _ => return None,
    };
    builtin_profiles().into_iter().find(|p| p.name == canonical)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    SingleStream,
    ConstantStream,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SingleStream => "single_stream",
            Scenario::ConstantStream => "constant_stream",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_stream" | "single-stream" => Ok(Scenario::SingleStream),
            "constant_stream" | "constant-stream" => Ok(Scenario::ConstantStream),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Performance,
    Accuracy,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Performance => "performance",
            Mode::Accuracy => "accuracy",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "performance" => Ok(Mode::Performance),
            "accuracy" => Ok(Mode::Accuracy),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub profile: Option<String>,
    pub scenario: Scenario,
    pub mode: Mode,
    pub seed: u64,
    pub min_duration_ns: u64,
    pub min_query_count: u64,
    pub store_size: usize,
    /// `None` means the profile resolution (width x height x 3).
    pub sample_bytes: Option<usize>,
    pub rate_override_hz: Option<f64>,
    pub sut_endpoint: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            profile: None,
            scenario: Scenario::SingleStream,
            mode: Mode::Performance,
            seed: 0,
            min_duration_ns: DESK_MIN_DURATION_NS,
            min_query_count: default_min_query_count(0.999),
            store_size: DEFAULT_STORE_SIZE,
            sample_bytes: None,
            rate_override_hz: None,
            sut_endpoint: DEFAULT_SUT_ENDPOINT.into(),
        }
    }
}

impl RunSettings {
    /// Desk defaults with the longer submission duration.
    pub fn submission() -> Self {
        Self {
            min_duration_ns: SUBMISSION_MIN_DURATION_NS,
            ..Self::default()
        }
    }

    pub fn effective_rate_hz(&self, profile: &BenchmarkProfile) -> Option<f64> {
        self.rate_override_hz.or(profile.constant_stream_hz)
    }

    pub fn effective_sample_bytes(&self, profile: &BenchmarkProfile) -> usize {
        self.sample_bytes
            .unwrap_or_else(|| profile.default_sample_bytes())
    }
}

fn default_min_query_count(tail: f64) -> u64 {
    stats::min_query_count(tail, DEFAULT_CONFIDENCE).expect("built-in tail percentile is in range")
}

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("cannot read settings file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("constant_stream requires a rate: set `rate_override_hz` or choose a profile with constant_stream_hz")]
    MissingRate,
}

impl SettingsError {
    /// The settings key the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            SettingsError::UnknownKey { key, .. }
            | SettingsError::DuplicateKey { key, .. }
            | SettingsError::InvalidValue { key, .. } => Some(key),
            SettingsError::UnknownProfile(_) => Some("profile"),
            SettingsError::MissingRate => Some("constant_stream_hz"),
            _ => None,
        }
    }
}

pub const SETTINGS_KEYS: [&str; 10] = [
    "scenario",
    "mode",
    "seed",
    "min_duration_ns",
    "min_query_count",
    "store_size",
    "sample_bytes",
    "rate_override_hz",
    "profile",
    "sut_endpoint",
];

pub fn load_settings(path: &Path) -> Result<RunSettings, SettingsError> {
    load_settings_with(path, RunSettings::default())
}

/// Reads a settings file on top of `base` (e.g. [`RunSettings::submission`]).
pub fn load_settings_with(path: &Path, base: RunSettings) -> Result<RunSettings, SettingsError> {
    let text = std::fs::read_to_string(path).map_err(|source| SettingsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_settings(&text, base)
}

fn invalid(key: &str, reason: impl Into<String>) -> SettingsError {
    SettingsError::InvalidValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, SettingsError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| invalid(key, format!("`{value}`: {e}")))
}

pub fn parse_settings(text: &str, base: RunSettings) -> Result<RunSettings, SettingsError> {
    let mut settings = base;
    let mut seen: Vec<&str> = Vec::new();
    let mut explicit_min_queries = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(SettingsError::Syntax { line: line_no })?;
        let Some(&key) = SETTINGS_KEYS.iter().find(|k| **k == key) else {
            return Err(SettingsError::UnknownKey {
                line: line_no,
                key: key.to_string(),
            });
        };
        if seen.contains(&key) {
            return Err(SettingsError::DuplicateKey {
                line: line_no,
                key: key.to_string(),
            });
        }
        seen.push(key);

        match key {
            "scenario" => settings.scenario = value.parse().map_err(|e: String| invalid(key, e))?,
            "mode" => settings.mode = value.parse().map_err(|e: String| invalid(key, e))?,
            "seed" => settings.seed = parse_num(key, value)?,
            "min_duration_ns" => settings.min_duration_ns = parse_num(key, value)?,
            "min_query_count" => {
                let n: u64 = parse_num(key, value)?;
                if n == 0 {
                    return Err(invalid(key, "must be at least 1"));
                }
                settings.min_query_count = n;
                explicit_min_queries = true;
            }
            "store_size" => {
                let n: usize = parse_num(key, value)?;
                if n == 0 {
                    return Err(invalid(key, "must be at least 1"));
                }
                settings.store_size = n;
            }
            "sample_bytes" => {
                let n: usize = parse_num(key, value)?;
                if n == 0 {
                    return Err(invalid(key, "must be at least 1"));
                }
                settings.sample_bytes = Some(n);
            }
            "rate_override_hz" => {
                let hz: f64 = parse_num(key, value)?;
                if !(hz.is_finite() && hz > 0.0) {
                    return Err(invalid(key, "must be a positive finite rate"));
                }
                settings.rate_override_hz = Some(hz);
            }
            "profile" => {
                let profile = find_profile(value)
                    .ok_or_else(|| SettingsError::UnknownProfile(value.to_string()))?;
                settings.profile = Some(profile.name);
            }
            "sut_endpoint" => {
                if value.is_empty() || value.contains(',') {
                    return Err(invalid(key, "must be non-empty and contain no commas"));
                }
                settings.sut_endpoint = value.to_string();
            }
            _ => unreachable!("key list is exhaustive"),
        }
    }

    let profile = settings.profile.as_deref().and_then(find_profile);
    if !explicit_min_queries {
        let tail = profile.as_ref().map_or(0.999, |p| p.tail_percentile);
        settings.min_query_count = default_min_query_count(tail);
    }
    if settings.scenario == Scenario::ConstantStream
        && settings.rate_override_hz.is_none()
        && profile.and_then(|p| p.constant_stream_hz).is_none()
    {
        return Err(SettingsError::MissingRate);
    }
    Ok(settings)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn in_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Checks the profile and settings invariants; an empty list means the pair
/// is runnable.
pub fn validate(profile: &BenchmarkProfile, settings: &RunSettings) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &'static str, message: String| out.push(Violation { field, message });

    if profile.name.is_empty() || profile.name.contains([',', '\n']) {
        push("name", "profile name must be non-empty with no commas".into());
    }
    if profile.inputs_per_query == 0 {
        push("inputs_per_query", "must be at least 1".into());
    }
    if profile.input_width_px == 0 || profile.input_height_px == 0 {
        push("resolution", "width and height must be positive".into());
    }
    if !in_open_unit(profile.tail_percentile) {
        push(
            "tail_percentile",
            format!("{} is outside (0, 1)", profile.tail_percentile),
        );
    }
    if !(profile.accuracy_constraint > 0.0 && profile.accuracy_constraint <= 1.0) {
        push(
            "accuracy_constraint",
            format!("{} is outside (0, 1]", profile.accuracy_constraint),
        );
    }
    if let Some(hz) = profile.constant_stream_hz {
        if !(hz.is_finite() && hz > 0.0) {
            push("constant_stream_hz", format!("{hz} is not a positive rate"));
        }
    }
    if let Some(r) = profile.reference_metric {
        if !(r.is_finite() && r >= 0.0) {
            push("reference_metric", format!("{r} is not a non-negative value"));
        }
    }

    if let Some(name) = &settings.profile {
        let matches = find_profile(name).map_or(name == &profile.name, |p| p.name == profile.name);
        if !matches {
            push(
                "profile",
                format!("settings name `{name}` but running `{}`", profile.name),
            );
        }
    }
    if settings.min_query_count == 0 {
        push("min_query_count", "must be at least 1".into());
    }
    if settings.store_size == 0 {
        push("store_size", "must be at least 1".into());
    }
    if settings.store_size > u32::MAX as usize {
        push("store_size", "must fit in 32 bits".into());
    }
    if settings.sample_bytes == Some(0) {
        push("sample_bytes", "must be at least 1".into());
    }
    if let Some(hz) = settings.rate_override_hz {
        if !(hz.is_finite() && hz > 0.0) {
            push("rate_override_hz", format!("{hz} is not a positive rate"));
        }
    }
    if settings.scenario == Scenario::ConstantStream && settings.effective_rate_hz(profile).is_none()
    {
        push(
            "constant_stream_hz",
            "constant_stream needs a profile rate or rate_override_hz".into(),
        );
    }
    if settings.sut_endpoint.is_empty() || settings.sut_endpoint.contains([',', '\n']) {
        push(
            "sut_endpoint",
            "must be non-empty and contain no commas".into(),
        );
    }
    if settings.sut_endpoint.starts_with("tcp:")
        && settings.effective_sample_bytes(profile) > crate::ipc::MAX_SAMPLE_BYTES
    {
        push(
            "sample_bytes",
            format!(
                "remote SUTs accept samples up to {} bytes",
                crate::ipc::MAX_SAMPLE_BYTES
            ),
        );
    }
    out
}
