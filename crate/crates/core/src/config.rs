//! Planner tunables. Every weight has a default chosen for this planner;
//! only `beta` and `k_prune` have externally fixed values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qp::QpSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// `1 - ratio`: larger (or better-covered) zones are cheaper.
    Complement,
    /// The raw ratio.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YieldSpeedCap {
    /// Yield constrains position only.
    Off,
    /// Yield additionally forces `s_dot <= 0` inside the window.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // convex decomposition and decision costs
    pub inflation_margin: f64,
    pub area_cost_mode: CostMode,
    pub lane_cost_mode: CostMode,
    pub invert_move_cost: bool,
    pub w_area: f64,
    pub w_lane: f64,
    pub w_link: f64,
    pub w_move: f64,
    pub k_prune: usize,
    pub max_decisions: usize,

    // coarse decision evaluation
    pub coarse_ds: f64,
    pub w_ref: f64,
    pub w_pass: f64,
    pub w_11: f64,
    pub w_12: f64,
    pub w_21: f64,
    pub w_22: f64,
    pub w_23: f64,
    pub w_24: f64,

    // path optimization
    pub path_w0: f64,
    pub path_w1: f64,
    pub path_w2: f64,
    pub path_w3: f64,
    pub w_obs: f64,
    pub beta: f64,
    pub path_block_len: f64,
    pub path_con_ds: f64,
    pub path_sample_ds: f64,
    pub dl_bound: f64,
    pub ddl_bound: f64,

    // speed optimization
    pub speed_w0: f64,
    pub speed_w1: f64,
    pub speed_w2: f64,
    pub speed_w3: f64,
    pub speed_block_len: f64,
    pub speed_con_dt: f64,
    pub yield_margin: f64,
    pub overtake_margin: f64,
    pub follow_gap_min: f64,
    pub follow_headway: f64,
    pub lateral_buffer: f64,
    pub yield_speed_cap: YieldSpeedCap,

    // solver and iteration
    pub tol_kkt: f64,
    pub tol_feas: f64,
    pub qp_max_iter: usize,
    pub max_iter: usize,
    pub eps_l: f64,
    pub eps_s: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            inflation_margin: 0.2,
            area_cost_mode: CostMode::Complement,
            lane_cost_mode: CostMode::Complement,
            invert_move_cost: false,
            w_area: 1.0,
            w_lane: 1.0,
            w_link: 0.0,
            w_move: 1.0,
            k_prune: 20,
            max_decisions: 4096,

            coarse_ds: 5.0,
            w_ref: 1.0,
            w_pass: 1.0,
            w_11: 10.0,
            w_12: 10.0,
            w_21: 0.5,
            w_22: 0.5,
            w_23: 0.5,
            w_24: 0.5,

            path_w0: 1.0,
            path_w1: 10.0,
            path_w2: 100.0,
            path_w3: 500.0,
            w_obs: 0.1,
            beta: 0.2,
            path_block_len: 15.0,
            path_con_ds: 1.0,
            path_sample_ds: 0.5,
            dl_bound: 0.3,
            ddl_bound: 0.05,

            speed_w0: 1.0,
            speed_w1: 5.0,
            speed_w2: 50.0,
            speed_w3: 200.0,
            speed_block_len: 1.0,
            speed_con_dt: 0.2,
            yield_margin: 2.0,
            overtake_margin: 2.0,
            follow_gap_min: 5.0,
            follow_headway: 1.5,
            lateral_buffer: 0.1,
            yield_speed_cap: YieldSpeedCap::Off,

            tol_kkt: 1e-6,
            tol_feas: 1e-6,
            qp_max_iter: 10_000,
            max_iter: 10,
            eps_l: 0.05,
            eps_s: 0.1,
        }
    }
}

impl Config {
    /// Parses a flat `key = value` TOML file, or JSON when the text starts
    /// with `{`. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("inflation_margin", self.inflation_margin),
            ("w_area", self.w_area),
            ("w_lane", self.w_lane),
            ("w_link", self.w_link),
            ("w_move", self.w_move),
            ("w_ref", self.w_ref),
            ("w_pass", self.w_pass),
            ("w_11", self.w_11),
            ("w_12", self.w_12),
            ("w_21", self.w_21),
            ("w_22", self.w_22),
            ("w_23", self.w_23),
            ("w_24", self.w_24),
            ("path_w0", self.path_w0),
            ("path_w1", self.path_w1),
            ("path_w2", self.path_w2),
            ("path_w3", self.path_w3),
            ("w_obs", self.w_obs),
            ("beta", self.beta),
            ("speed_w0", self.speed_w0),
            ("speed_w1", self.speed_w1),
            ("speed_w2", self.speed_w2),
            ("speed_w3", self.speed_w3),
            ("yield_margin", self.yield_margin),
            ("overtake_margin", self.overtake_margin),
            ("follow_gap_min", self.follow_gap_min),
            ("follow_headway", self.follow_headway),
            ("lateral_buffer", self.lateral_buffer),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0")));
            }
        }
        let positive = [
            ("coarse_ds", self.coarse_ds),
            ("path_block_len", self.path_block_len),
            ("path_con_ds", self.path_con_ds),
            ("path_sample_ds", self.path_sample_ds),
            ("dl_bound", self.dl_bound),
            ("ddl_bound", self.ddl_bound),
            ("speed_block_len", self.speed_block_len),
            ("speed_con_dt", self.speed_con_dt),
            ("tol_kkt", self.tol_kkt),
            ("tol_feas", self.tol_feas),
            ("eps_l", self.eps_l),
            ("eps_s", self.eps_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.k_prune < 1 {
            return Err(Error::Config("k_prune must be >= 1".into()));
        }
        if self.max_iter < 1 || self.qp_max_iter < 1 || self.max_decisions < 1 {
            return Err(Error::Config("iteration caps must be >= 1".into()));
        }
        if self.path_block_len < 2.0 {
            return Err(Error::Config("path_block_len must be >= 2 m".into()));
        }
        if self.speed_block_len < 0.5 {
            return Err(Error::Config("speed_block_len must be >= 0.5 s".into()));
        }
        Ok(())
    }

    /// Flat TOML listing of every key with its current value.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!(
            "# triplan planner configuration\n\
             # Weights, margins and thresholds below are this planner's defaults;\n\
             # only beta = 0.2 and k_prune = 20 come from the method description.\n\
             {body}"
        )
    }

    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol_kkt: self.tol_kkt,
            tol_feas: self.tol_feas,
            max_iter: self.qp_max_iter,
        }
    }

    /// Short stable fingerprint of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}
