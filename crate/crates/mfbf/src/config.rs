//! Run configuration: a flat TOML schema with defaults, strict
//! validation, and a stable content hash for run metadata.
//!
//! Precedence is flag > file > default: the CLI loads the file (when
//! given), then applies flag overrides, then validates.

use crate::barrier::{FilterConfig, SeparationMargin};
use crate::dynamics::{
    make_action_set, ActionChoices, ActionSet, ControlBounds, ControlInput, FwUavPlant,
    PlantParams,
};
use crate::error::{Error, Result};
use crate::learning::{AngleMode, Optimizer, SamplerSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_pi() -> f64 {
    std::f64::consts::PI
}

/// Flat run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Plant.
    pub dt: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max_deg: f64,
    pub zeta_max: f64,

    // Discrete actions.
    pub omega_choices_deg: Vec<f64>,
    pub v_fixed: f64,
    pub zeta_fixed: f64,

    // Safety.
    pub ds: f64,
    pub clip: f64,
    pub lambda: f64,

    // Horizons.
    pub barrier_horizon: usize,
    pub episode_steps: usize,
    pub capture_radius: f64,

    // Start-state box (8 dims: x1 y1 th1 z1 x2 y2 th2 z2).
    pub sampler_lo: Vec<f64>,
    pub sampler_hi: Vec<f64>,

    // Learning.
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    /// "sgd" (optionally with momentum) or "adam".
    pub optimizer: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub mc_samples: usize,
    /// Stochastic passes for barrier evaluation during rollouts and
    /// grids; 0 means use mc_samples.
    pub barrier_mc_samples: usize,
    pub n_sigma: f64,
    pub validation_fraction: f64,
    /// "cos_sin" appends heading cos/sin features; "raw" does not.
    pub angle_encoding: String,
    /// Append translation/rotation-invariant relative-pose features.
    pub relative_features: bool,
    pub record_deltas: bool,

    // Experiment scales.
    pub initial_episodes: usize,
    pub episodes_per_iteration: usize,
    pub iterations: usize,
    pub eval_episodes: usize,

    // Orchestration.
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Results are identical for any
    /// setting.
    pub jobs: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pi = default_pi();
        Self {
            dt: 0.1,
            v_min: 10.0,
            v_max: 20.0,
            omega_max_deg: 12.0,
            zeta_max: 5.0,
            omega_choices_deg: vec![-12.0, 0.0, 12.0],
            v_fixed: 15.0,
            zeta_fixed: 0.0,
            ds: 25.0,
            clip: 50.0,
            lambda: 1.0,
            barrier_horizon: 500,
            episode_steps: 500,
            capture_radius: 15.0,
            sampler_lo: vec![-200.0, -200.0, -pi, 0.0, -200.0, -200.0, -pi, 0.0],
            sampler_hi: vec![200.0, 200.0, pi, 0.0, 200.0, 200.0, pi, 0.0],
            hidden_layers: vec![128, 128],
            learning_rate: 1e-4,
            momentum: 0.0,
            optimizer: "sgd".into(),
            epochs: 2000,
            batch_size: 256,
            dropout: 0.5,
            mc_samples: 50,
            barrier_mc_samples: 0,
            n_sigma: 3.0,
            validation_fraction: 0.1,
            angle_encoding: "cos_sin".into(),
            relative_features: true,
            record_deltas: true,
            initial_episodes: 5000,
            episodes_per_iteration: 2000,
            iterations: 3,
            eval_episodes: 500,
            seed: 0,
            jobs: 0,
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML file; unknown keys are errors.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Canonical TOML rendering of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable content hash of the resolved config, for run metadata.
    pub fn content_hash(&self) -> String {
        let text = self.to_toml();
        let h = crate::seeds::hash_words(text.bytes().map(|b| b as u64));
        format!("{h:016x}")
    }

    pub fn validate(&self) -> Result<()> {
        self.plant_params()?.validate()?;
        if !(self.ds > 0.0) {
            return Err(Error::InvalidConfig(format!("ds must be > 0, got {}", self.ds)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidConfig(format!("clip must be > 0, got {}", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.barrier_horizon == 0 || self.episode_steps == 0 {
            return Err(Error::InvalidConfig(
                "barrier_horizon and episode_steps must be >= 1".into(),
            ));
        }
        if !(self.capture_radius > 0.0) {
            return Err(Error::InvalidConfig("capture_radius must be > 0".into()));
        }
        if self.sampler_lo.len() != 8 || self.sampler_hi.len() != 8 {
            return Err(Error::InvalidConfig(
                "sampler bounds must have 8 components".into(),
            ));
        }
        for (i, (l, h)) in self.sampler_lo.iter().zip(self.sampler_hi.iter()).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidConfig(format!(
                    "sampler dim {i}: need finite lo <= hi, got [{l}, {h}]"
                )));
            }
        }
        match self.angle_encoding.as_str() {
            "cos_sin" | "raw" => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "angle_encoding must be cos_sin or raw, got {other:?}"
                )))
            }
        }
        match self.optimizer.as_str() {
            "sgd" | "adam" => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "optimizer must be sgd or adam, got {other:?}"
                )))
            }
        }
        self.train_config().validate()?;
        // Constructing the action set validates the choices against bounds.
        self.action_set()?;
        if self.initial_episodes == 0
            || self.episodes_per_iteration == 0
            || self.iterations == 0
            || self.eval_episodes == 0
        {
            return Err(Error::InvalidConfig(
                "episode counts and iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }

    // ---- Derived pieces ----

    pub fn control_bounds(&self) -> ControlBounds {
        ControlBounds {
            v_min: self.v_min,
            v_max: self.v_max,
            omega_max: self.omega_max_deg.to_radians(),
            zeta_max: self.zeta_max,
        }
    }

    pub fn plant_params(&self) -> Result<PlantParams> {
        let p = PlantParams {
            dt: self.dt,
            bounds: self.control_bounds(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn plant(&self) -> Result<FwUavPlant> {
        Ok(FwUavPlant::new(self.plant_params()?))
    }

    pub fn omega_choices_rad(&self) -> Vec<f64> {
        self.omega_choices_deg.iter().map(|d| d.to_radians()).collect()
    }

    pub fn action_choices(&self) -> ActionChoices {
        ActionChoices::new(self.omega_choices_rad(), self.v_fixed, self.zeta_fixed)
    }

    pub fn action_set(&self) -> Result<ActionSet<ControlInput>> {
        make_action_set(
            &self.omega_choices_rad(),
            self.v_fixed,
            self.zeta_fixed,
            &self.control_bounds(),
        )
    }

    pub fn filter_config(&self) -> Result<FilterConfig<ControlInput>> {
        FilterConfig::new(self.lambda, self.action_set()?)
    }

    pub fn safety_margin(&self) -> Result<SeparationMargin> {
        SeparationMargin::new(self.ds, Some(self.clip))
    }

    pub fn sampler(&self, seed: u64) -> Result<SamplerSpec> {
        SamplerSpec::new(self.sampler_lo.clone(), self.sampler_hi.clone(), seed)
    }

    pub fn barrier_mc(&self) -> usize {
        if self.barrier_mc_samples == 0 {
            self.mc_samples
        } else {
            self.barrier_mc_samples
        }
    }

    pub fn angle_mode(&self) -> AngleMode {
        match self.angle_encoding.as_str() {
            "raw" => AngleMode::Raw,
            _ => AngleMode::CosSin,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_layers: self.hidden_layers.clone(),
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            optimizer: match self.optimizer.as_str() {
                "adam" => Optimizer::adam(),
                _ => Optimizer::Sgd,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            mc_samples: self.mc_samples,
            n_sigma: self.n_sigma,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("unknown_key = 3\n");
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn physically_inconsistent_settings_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.lambda = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.ds = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.v_min = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.omega_choices_deg = vec![-24.0, 0.0, 24.0];
        assert!(cfg.validate().is_err(), "choices beyond omega_max must fail");

        let mut cfg = RunConfig::default();
        cfg.sampler_lo[0] = 300.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 9\nds = 30.0\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ds, 30.0);
        assert_eq!(cfg.dt, 0.1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.seed = 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
