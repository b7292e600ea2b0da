//! Control file: seven positional values, then optional `key=value` tokens.

use std::path::Path;

use regimix::ecme::{EcmeConfig, LMConfig};
use regimix::em::EMConfig;
use regimix::lp::LPConfig;
use regimix::selection::SelectionConfig;

use crate::error::{read_text, CliError, CliResult};

pub const POSITIONAL_FIELDS: [&str; 7] = [
    "n_assets",
    "n_timepoints",
    "starts_multiplier",
    "max_components",
    "bootstrap_samples",
    "forward_alpha",
    "backward_alpha",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub n_assets: usize,
    pub n_timepoints: usize,
    /// Random EM starts per extra component.
    pub starts_multiplier: usize,
    pub max_components: usize,
    pub bootstrap_samples: usize,
    pub forward_alpha: f64,
    pub backward_alpha: f64,
    pub seed: u64,
    pub std_ratio_bound: f64,
    pub lp: LPConfig,
    pub lm: LMConfig,
    pub threads: Option<usize>,
}

impl ControlConfig {
    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            max_components: self.max_components,
            bootstrap_samples: self.bootstrap_samples,
            forward_alpha: self.forward_alpha,
            backward_alpha: self.backward_alpha,
            em: EMConfig {
                std_ratio_bound: self.std_ratio_bound,
                starts_per_component: self.starts_multiplier,
                ..EMConfig::default()
            },
        }
    }

    pub fn ecme(&self) -> EcmeConfig {
        EcmeConfig {
            lm: self.lm,
            ..EcmeConfig::default()
        }
    }

    fn validate(&self) -> CliResult<()> {
        for (name, v) in [
            ("n_assets", self.n_assets),
            ("n_timepoints", self.n_timepoints),
            ("starts_multiplier", self.starts_multiplier),
            ("max_components", self.max_components),
            ("bootstrap_samples", self.bootstrap_samples),
        ] {
            if v == 0 {
                return Err(CliError::parse(name, "must be at least 1"));
            }
        }
        for (name, a) in [("forward_alpha", self.forward_alpha), ("backward_alpha", self.backward_alpha)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::parse(name, format!("{a} is outside (0, 1)")));
            }
        }
        if self.threads == Some(0) {
            return Err(CliError::parse("threads", "must be at least 1"));
        }
        self.selection().validate().map_err(|e| CliError::parse("std_ratio_bound", e.to_string()))?;
        self.lp.validate().map_err(|e| CliError::parse("lp", e.to_string()))?;
        self.lm.validate().map_err(|e| CliError::parse("lm", e.to_string()))?;
        Ok(())
    }
}

fn number<T: std::str::FromStr>(field: &str, token: &str) -> CliResult<T> {
    token.parse().map_err(|_| CliError::parse(field, format!("cannot parse `{token}`")))
}

/// Parses control text. `#` starts a comment.
pub fn parse_control_str(text: &str) -> CliResult<ControlConfig> {
    let tokens: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .collect();
    let (keyed, positional): (Vec<&str>, Vec<&str>) = tokens.into_iter().partition(|t| t.contains('='));
    if positional.len() < POSITIONAL_FIELDS.len() {
        let missing = POSITIONAL_FIELDS.len() - positional.len();
        return Err(CliError::parse(POSITIONAL_FIELDS[positional.len()], format!("{missing} fields missing")));
    }
    if positional.len() > POSITIONAL_FIELDS.len() {
        return Err(CliError::parse("control", format!("unexpected token `{}`", positional[7])));
    }
    let mut cfg = ControlConfig {
        n_assets: number("n_assets", positional[0])?,
        n_timepoints: number("n_timepoints", positional[1])?,
        starts_multiplier: number("starts_multiplier", positional[2])?,
        max_components: number("max_components", positional[3])?,
        bootstrap_samples: number("bootstrap_samples", positional[4])?,
        forward_alpha: number("forward_alpha", positional[5])?,
        backward_alpha: number("backward_alpha", positional[6])?,
        seed: 1,
        std_ratio_bound: EMConfig::default().std_ratio_bound,
        lp: LPConfig::default(),
        lm: LMConfig::default(),
        threads: None,
    };
    for token in keyed {
        let (key, value) = token.split_once('=').unwrap_or((token, ""));
        match key {
            "seed" => cfg.seed = number(key, value)?,
            "std_ratio_bound" => cfg.std_ratio_bound = number(key, value)?,
            "lp_penalty" => cfg.lp.penalty_m = number(key, value)?,
            "lp_segments" => cfg.lp.ssd_segments = number(key, value)?,
            "lm_steps" => cfg.lm.steps_per_thread = number(key, value)?,
            "lm_multiplier" => cfg.lm.thread_multiplier = number(key, value)?,
            "lm_beat_pool" => cfg.lm.beat_pool = number(key, value)?,
            "lm_max_rounds" => cfg.lm.max_rounds = number(key, value)?,
            "threads" => cfg.threads = Some(number(key, value)?),
            _ => return Err(CliError::parse(key, "unknown key")),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_control(path: &Path) -> CliResult<ControlConfig> {
    parse_control_str(&read_text(path)?)
}
