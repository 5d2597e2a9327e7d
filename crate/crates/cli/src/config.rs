//! Layered run configuration: defaults, then a `key = value` config file,
//! then command-line flags, with validation after merging.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

/// Complete configuration for the `run` pipeline (and the stage subcommands,
/// which each read the subset they need).
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub input: PathBuf,
    /// "auto" | "obj" | "stl".
    pub format: String,
    pub out_dir: PathBuf,
    /// Simulation time between snapshots.
    pub checkpoint_interval: f64,
    /// Staleness constant scaling the per-vertex expiration window.
    pub cs: f64,
    /// Merge when an edge is shorter than this fraction of the mean edge.
    pub edge_frac: f64,
    /// Merge when a triangle angle falls below this (degrees).
    pub angle_deg: f64,
    /// Merge when a face is smaller than this fraction of the mean face area.
    pub face_frac: f64,
    /// Delete components whose area falls below this fraction of the initial
    /// total area (or with fewer than four vertices).
    pub vanish_area_frac: f64,
    /// Number of eigenmodes tracked per snapshot.
    pub modes: usize,
    /// Frequency scale: angular frequency is fs * sqrt(lambda).
    pub fs: f64,
    pub sample_rate: u32,
    pub pluck_vertex: usize,
    pub max_steps: u64,
    /// Seed for the eigensolver start vector.
    pub seed: u64,
    /// Worker cap for intra-stage parallelism; None uses all cores.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::new(),
            format: "auto".to_string(),
            out_dir: PathBuf::from("out"),
            checkpoint_interval: 5e-3,
            cs: 0.5,
            edge_frac: 0.05,
            angle_deg: 2.0,
            face_frac: 1e-4,
            vanish_area_frac: 1e-10,
            modes: 50,
            fs: 2.0 * std::f64::consts::PI * 440.0,
            sample_rate: 44_100,
            pluck_vertex: 0,
            max_steps: 500_000,
            seed: 7,
            threads: None,
        }
    }
}

/// Partial configuration carrying only explicitly set values. Flags and the
/// config file each produce one; later overlays win field by field.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverlay {
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_interval: Option<f64>,
    pub cs: Option<f64>,
    pub edge_frac: Option<f64>,
    pub angle_deg: Option<f64>,
    pub face_frac: Option<f64>,
    pub vanish_area_frac: Option<f64>,
    pub modes: Option<usize>,
    pub fs: Option<f64>,
    pub sample_rate: Option<u32>,
    pub pluck_vertex: Option<usize>,
    pub max_steps: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl ConfigOverlay {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow!("config key `{key}`: cannot parse `{value}`: {e}"))
        }
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "format" => self.format = Some(value.to_string()),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "checkpoint_interval" => self.checkpoint_interval = Some(parse(key, value)?),
            "cs" => self.cs = Some(parse(key, value)?),
            "edge_frac" => self.edge_frac = Some(parse(key, value)?),
            "angle_deg" => self.angle_deg = Some(parse(key, value)?),
            "face_frac" => self.face_frac = Some(parse(key, value)?),
            "vanish_area_frac" => self.vanish_area_frac = Some(parse(key, value)?),
            "modes" => self.modes = Some(parse(key, value)?),
            "fs" => self.fs = Some(parse(key, value)?),
            "sample_rate" => self.sample_rate = Some(parse(key, value)?),
            "pluck_vertex" => self.pluck_vertex = Some(parse(key, value)?),
            "max_steps" => self.max_steps = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "threads" => self.threads = Some(parse(key, value)?),
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<ConfigOverlay> {
    let mut overlay = ConfigOverlay::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", lineno + 1))?;
        overlay
            .set(key.trim(), value.trim())
            .with_context(|| format!("config line {}", lineno + 1))?;
    }
    Ok(overlay)
}

impl RunConfig {
    /// Applies defaults, then the config file (if any), then flag overrides.
    pub fn layered(file: Option<&Path>, flags: &ConfigOverlay) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            config.apply(&parse_config_text(&text)?);
        }
        config.apply(flags);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, overlay: &ConfigOverlay) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = overlay.$field.clone() { self.$field = v; })*
            };
        }
        take!(
            input, format, out_dir, checkpoint_interval, cs, edge_frac, angle_deg, face_frac,
            vanish_area_frac, modes, fs, sample_rate, pluck_vertex, max_steps, seed
        );
        if overlay.threads.is_some() {
            self.threads = overlay.threads;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.format.as_str(), "auto" | "obj" | "stl") {
            bail!("format must be auto, obj, or stl (got `{}`)", self.format);
        }
        let positive = [
            ("checkpoint_interval", self.checkpoint_interval),
            ("cs", self.cs),
            ("edge_frac", self.edge_frac),
            ("angle_deg", self.angle_deg),
            ("face_frac", self.face_frac),
            ("vanish_area_frac", self.vanish_area_frac),
            ("fs", self.fs),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                bail!("{name} must be positive and finite (got {value})");
            }
        }
        if self.modes == 0 {
            bail!("modes must be at least 1");
        }
        if self.sample_rate == 0 {
            bail!("sample_rate must be positive");
        }
        if self.max_steps == 0 {
            bail!("max_steps must be positive");
        }
        if self.threads == Some(0) {
            bail!("threads must be positive when given");
        }
        Ok(())
    }

    /// Translates the mesh-evolution subset into the flow module's config.
    pub fn flow_config(&self) -> flowsong::flow::FlowConfig {
        flowsong::flow::FlowConfig {
            staleness_constant: self.cs,
            edge_fraction: self.edge_frac,
            min_angle_deg: self.angle_deg,
            face_fraction: self.face_frac,
            vanish_area_fraction: self.vanish_area_frac,
            checkpoint_interval: self.checkpoint_interval,
            max_steps: self.max_steps,
            ..flowsong::flow::FlowConfig::default()
        }
    }

    /// Translates the sound subset into the sound module's config.
    pub fn waveform_config(&self) -> flowsong::sound::WaveformConfig {
        flowsong::sound::WaveformConfig {
            fs: self.fs,
            modes: self.modes,
            sample_rate: self.sample_rate,
            pluck_vertex: self.pluck_vertex,
            seed: self.seed,
            ..flowsong::sound::WaveformConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn config_file_overrides_defaults_and_flags_override_the_file() {
        let text = "\
# sphere run
modes = 12
cs = 0.25   # slower refresh
out_dir = from_file
";
        let file = parse_config_text(text).unwrap();
        let mut config = RunConfig::default();
        config.apply(&file);
        assert_eq!(config.modes, 12);
        assert_eq!(config.cs, 0.25);
        assert_eq!(config.out_dir, PathBuf::from("from_file"));

        let flags = ConfigOverlay {
            modes: Some(3),
            ..ConfigOverlay::default()
        };
        config.apply(&flags);
        assert_eq!(config.modes, 3);
        assert_eq!(config.cs, 0.25, "file value survives unrelated flags");
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_rejected() {
        assert!(parse_config_text("modez = 3").is_err());
        assert!(parse_config_text("modes 3").is_err());
        assert!(parse_config_text("modes = banana").is_err());
    }

    #[test]
    fn validation_rejects_nonpositive_values() {
        let mut config = RunConfig::default();
        config.checkpoint_interval = 0.0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.modes = 0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.format = "ply".into();
        assert!(config.validate().is_err());
    }
}
