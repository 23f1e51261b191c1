//! `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use f1rapm_core::FitConfig;

/// Bad flags, config keys or values; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub results: Option<PathBuf>,
    /// Path to a `constructor,parent` file, or `builtin`.
    pub parent_map: Option<String>,
    pub indeterminate_statuses: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub lineup: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

fn parse_on_off(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got `{v}`")),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| UsageError(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let fit = &mut self.fit;
        // An empty value leaves a path unset.
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "season_decay" => fit.decay.season_decay = num(value)?,
            "round_decay" => fit.decay.round_decay = num(value)?,
            "points_positions" => fit.rank_weights.points_positions = num(value)?,
            "rank_weights" => fit.rank_weights.enabled = parse_on_off(value)?,
            "lambda" => fit.lambda = num(value)?,
            "dnf_policy" => fit.dnf_policy = value.parse().map_err(|e| format!("{e}"))?,
            "driver_cap" => fit.blend.driver_cap = num(value)?,
            "constructor_cap" => fit.blend.constructor_cap = num(value)?,
            "races_scale" => fit.blend.races_scale = num(value)?,
            "loess_span" => fit.blend.loess_span = num(value)?,
            "loess_degree" => fit.blend.loess_degree = num(value)?,
            "bootstrap_replicates" => fit.bootstrap_replicates = num(value)?,
            "seed" => fit.seed = num(value)?,
            "warm_start_seasons" => fit.warm_start_seasons = num(value)?,
            "session" => fit.session = value.parse().map_err(|e| format!("{e}"))?,
            "prediction_mode" => fit.prediction_mode = value.parse().map_err(|e| format!("{e}"))?,
            "results" => self.results = path(),
            "parent_map" => self.parent_map = (!value.is_empty()).then(|| value.to_string()),
            "indeterminate_statuses" => self.indeterminate_statuses = path(),
            "dataset" => self.dataset = path(),
            "ratings" => self.ratings = path(),
            "lineup" => self.lineup = path(),
            "grid" => self.grid = path(),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Every key with its effective value, in the config-file format.
    pub fn render(&self) -> String {
        let f = &self.fit;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("season_decay", f.decay.season_decay.to_string());
        kv("round_decay", f.decay.round_decay.to_string());
        kv("points_positions", f.rank_weights.points_positions.to_string());
        kv("rank_weights", if f.rank_weights.enabled { "on" } else { "off" }.into());
        kv("lambda", f.lambda.to_string());
        kv("dnf_policy", f.dnf_policy.as_str().into());
        kv("driver_cap", f.blend.driver_cap.to_string());
        kv("constructor_cap", f.blend.constructor_cap.to_string());
        kv("races_scale", f.blend.races_scale.to_string());
        kv("loess_span", f.blend.loess_span.to_string());
        kv("loess_degree", f.blend.loess_degree.to_string());
        kv("bootstrap_replicates", f.bootstrap_replicates.to_string());
        kv("seed", f.seed.to_string());
        kv("warm_start_seasons", f.warm_start_seasons.to_string());
        kv("session", f.session.as_str().into());
        kv("prediction_mode", f.prediction_mode.as_str().into());
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        kv("results", opt(&self.results));
        kv("parent_map", self.parent_map.clone().unwrap_or_default());
        kv("indeterminate_statuses", opt(&self.indeterminate_statuses));
        kv("dataset", opt(&self.dataset));
        kv("ratings", opt(&self.ratings));
        kv("lineup", opt(&self.lineup));
        kv("grid", opt(&self.grid));
        out
    }
}
