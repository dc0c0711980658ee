//! Plain-text `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Absent keys keep the
//! desk-scale defaults, `preset = paper` switches the baseline to the
//! full-scale setup before any other key is applied (wherever it appears).
//! Unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::degrade::DegradationRanges;
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "preset",
    "epochs_flat",
    "epochs_decay",
    "base_lr",
    "batch_size",
    "k",
    "seed",
    "use_scs",
    "use_hfc",
    "use_dh",
    "freeze_scs",
    "num_layers",
    "base_channels",
    "max_channels",
    "kernel_size",
    "negative_slope",
    "init_seed",
    "input_size",
    "hfc_radius",
    "hfc_sigma",
    "alpha_min",
    "alpha_max",
    "beta_min",
    "beta_max",
    "r_b_min",
    "r_b_max",
    "sigma_b_min",
    "sigma_b_max",
    "r_l_min",
    "r_l_max",
    "sigma_l_min",
    "sigma_l_max",
    "panel_margin",
    "raw_panel",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Already carries the ablation switches of `train`.
    pub model: ModelConfig,
    pub ranges: DegradationRanges,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            train: TrainConfig::desk(),
            model: ModelConfig::desk(),
            ranges: DegradationRanges::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            train: TrainConfig::paper(),
            model: ModelConfig::paper(),
            ranges: DegradationRanges::default(),
        }
    }

    /// Every key with its current value, parseable by [`parse_config_str`].
    /// Panel centres are written as a margin, so asymmetric centre ranges
    /// do not survive the round trip.
    pub fn to_text(&self) -> String {
        let (t, m, r) = (&self.train, &self.model, &self.ranges);
        let pairs: Vec<(&str, String)> = vec![
            ("epochs_flat", t.epochs_flat.to_string()),
            ("epochs_decay", t.epochs_decay.to_string()),
            ("base_lr", t.base_lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("k", t.k.to_string()),
            ("seed", t.seed.to_string()),
            ("use_scs", t.use_scs.to_string()),
            ("use_hfc", t.use_hfc.to_string()),
            ("use_dh", t.use_dh.to_string()),
            ("freeze_scs", t.freeze_scs.to_string()),
            ("num_layers", m.num_layers.to_string()),
            ("base_channels", m.base_channels.to_string()),
            ("max_channels", m.max_channels.to_string()),
            ("kernel_size", m.kernel_size.to_string()),
            ("negative_slope", m.negative_slope.to_string()),
            ("init_seed", m.seed.to_string()),
            ("input_size", m.input_size.to_string()),
            ("hfc_radius", m.hfc_radius.to_string()),
            ("hfc_sigma", m.hfc_sigma.to_string()),
            ("alpha_min", r.alpha.0.to_string()),
            ("alpha_max", r.alpha.1.to_string()),
            ("beta_min", r.beta.0.to_string()),
            ("beta_max", r.beta.1.to_string()),
            ("r_b_min", r.r_b.0.to_string()),
            ("r_b_max", r.r_b.1.to_string()),
            ("sigma_b_min", r.sigma_b.0.to_string()),
            ("sigma_b_max", r.sigma_b.1.to_string()),
            ("r_l_min", r.r_l.0.to_string()),
            ("r_l_max", r.r_l.1.to_string()),
            ("sigma_l_min", r.sigma_l.0.to_string()),
            ("sigma_l_max", r.sigma_l.1.to_string()),
            ("panel_margin", r.center_a.0.to_string()),
            ("raw_panel", r.raw_panel.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.ranges.validate()
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse {value:?} for {key}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("{key} expects true or false, got {value:?}"),
        }),
    }
}

/// `(line number, key, value)` of every setting.
fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                message: format!("unknown key {key:?}"),
            });
        }
        if value.is_empty() {
            return Err(Error::Config {
                line,
                message: format!("{key} has no value"),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                message: format!("{key} is set twice"),
            });
        }
        out.push((line, key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let entries = entries(text)?;
    let mut cfg = RunConfig::desk();
    if let Some((line, _, value)) = entries.iter().find(|(_, k, _)| k == "preset") {
        cfg = match value.as_str() {
            "paper" => RunConfig::paper(),
            "desk" => RunConfig::desk(),
            _ => {
                return Err(Error::Config {
                    line: *line,
                    message: format!("unknown preset {value:?} (expected desk or paper)"),
                })
            }
        };
    }

    let mut panel_margin = None;
    for (line, key, value) in &entries {
        let line = *line;
        let v = value.as_str();
        let k = key.as_str();
        let (t, m, r) = (&mut cfg.train, &mut cfg.model, &mut cfg.ranges);
        match k {
            "preset" => {}
            "epochs_flat" => t.epochs_flat = parse_value(line, k, v)?,
            "epochs_decay" => t.epochs_decay = parse_value(line, k, v)?,
            "base_lr" => t.base_lr = parse_value(line, k, v)?,
            "batch_size" => t.batch_size = parse_value(line, k, v)?,
            "k" => t.k = parse_value(line, k, v)?,
            "seed" => t.seed = parse_value(line, k, v)?,
            "use_scs" => t.use_scs = parse_bool(line, k, v)?,
            "use_hfc" => t.use_hfc = parse_bool(line, k, v)?,
            "use_dh" => t.use_dh = parse_bool(line, k, v)?,
            "freeze_scs" => t.freeze_scs = parse_bool(line, k, v)?,
            "num_layers" => m.num_layers = parse_value(line, k, v)?,
            "base_channels" => m.base_channels = parse_value(line, k, v)?,
            "max_channels" => m.max_channels = parse_value(line, k, v)?,
            "kernel_size" => m.kernel_size = parse_value(line, k, v)?,
            "negative_slope" => m.negative_slope = parse_value(line, k, v)?,
            "init_seed" => m.seed = parse_value(line, k, v)?,
            "input_size" => m.input_size = parse_value(line, k, v)?,
            "hfc_radius" => m.hfc_radius = parse_value(line, k, v)?,
            "hfc_sigma" => m.hfc_sigma = parse_value(line, k, v)?,
            "alpha_min" => r.alpha.0 = parse_value(line, k, v)?,
            "alpha_max" => r.alpha.1 = parse_value(line, k, v)?,
            "beta_min" => r.beta.0 = parse_value(line, k, v)?,
            "beta_max" => r.beta.1 = parse_value(line, k, v)?,
            "r_b_min" => r.r_b.0 = parse_value(line, k, v)?,
            "r_b_max" => r.r_b.1 = parse_value(line, k, v)?,
            "sigma_b_min" => r.sigma_b.0 = parse_value(line, k, v)?,
            "sigma_b_max" => r.sigma_b.1 = parse_value(line, k, v)?,
            "r_l_min" => r.r_l.0 = parse_value(line, k, v)?,
            "r_l_max" => r.r_l.1 = parse_value(line, k, v)?,
            "sigma_l_min" => r.sigma_l.0 = parse_value(line, k, v)?,
            "sigma_l_max" => r.sigma_l.1 = parse_value(line, k, v)?,
            "panel_margin" => panel_margin = Some(parse_value::<f64>(line, k, v)?),
            "raw_panel" => r.raw_panel = parse_bool(line, k, v)?,
            _ => unreachable!("keys are checked against KEYS"),
        }
    }
    if let Some(margin) = panel_margin {
        cfg.ranges.set_panel_margin(margin)?;
    }
    cfg.model = cfg.train.apply_to(&cfg.model);
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}
