//! Scenario configuration, loaded from a flat TOML key-value file.
//!
//! Every key is optional; missing keys take the vehicle scenario defaults.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `horizon` | integer | 1000 |
//! | `seed` | integer | 1 |
//! | `runs` | integer | 100 |
//! | `l_f`, `l_r` | float | 1.25 |
//! | `sample_time` | float | 0.01 |
//! | `x_max`, `y_max`, `v_max` | float | 20, 5, 22 |
//! | `steering_max`, `accel_max` | float | 1.0472, 3.5 |
//! | `q_diag`, `r_diag` | 4 floats | see [`VehicleParams`] |
//! | `process_noise_scale`, `measurement_noise_scale` | float | 1 |
//! | `control` | 2 floats `[β, a]` | `[0, 0]` |
//! | `attack` | `"vehicle"` or `"none"` | `"vehicle"` |
//! | `initial_state` | 4 floats | `[2, 2.5, 0, 10]` |
//! | `initial_estimate` | 4 floats | `initial_state` |
//! | `initial_covariance` | float (multiple of I) | 10 |
//! | `plant_saturation` | bool | true |
//! | `alpha`, `forgetting` | float | 0.01, 0.15 |
//! | `statistic` | `"floored"` or `"row-space"` | `"floored"` |
//! | `window_state_error` | `[lo, hi]` | `[0, horizon]` |
//! | `window_attack_error` | `[lo, hi]` | `[0, horizon]` |
//! | `window_state_trace` | `[lo, hi]` | `[0, horizon]` |
//! | `window_attack_trace` | `[lo, hi]` | `[100, horizon]` |

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detector::StatisticMode;
use crate::error::{Error, Result};
use crate::harness::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    /// The steering and acceleration waveform of [`super::vehicle::attack_signal`].
    #[default]
    Vehicle,
    None,
}

/// Inclusive step window `[lo, hi]` for a summed metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub fn contains(&self, k: usize) -> bool {
        self.lo <= k && k <= self.hi
    }
}

/// Resolved metric windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Windows {
    pub state_error: Window,
    pub attack_error: Window,
    pub state_trace: Window,
    pub attack_trace: Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: usize,
    pub seed: u64,
    pub runs: usize,
    pub l_f: f64,
    pub l_r: f64,
    pub sample_time: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub v_max: f64,
    pub steering_max: f64,
    pub accel_max: f64,
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 4],
    pub process_noise_scale: f64,
    pub measurement_noise_scale: f64,
    pub control: [f64; 2],
    pub attack: AttackKind,
    pub initial_state: [f64; 4],
    pub initial_estimate: Option<[f64; 4]>,
    pub initial_covariance: f64,
    pub plant_saturation: bool,
    pub alpha: f64,
    pub forgetting: f64,
    pub statistic: StatisticMode,
    pub window_state_error: Option<[usize; 2]>,
    pub window_attack_error: Option<[usize; 2]>,
    pub window_state_trace: Option<[usize; 2]>,
    pub window_attack_trace: Option<[usize; 2]>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            horizon: 1000,
            seed: 1,
            runs: 100,
            l_f: p.l_f,
            l_r: p.l_r,
            sample_time: p.sample_time,
            x_max: p.x_max,
            y_max: p.y_max,
            v_max: p.v_max,
            steering_max: p.steering_max,
            accel_max: p.accel_max,
            q_diag: p.q_diag,
            r_diag: p.r_diag,
            process_noise_scale: 1.0,
            measurement_noise_scale: 1.0,
            control: [0.0, 0.0],
            attack: AttackKind::Vehicle,
            initial_state: [2.0, 2.5, 0.0, 10.0],
            initial_estimate: None,
            initial_covariance: 10.0,
            plant_saturation: true,
            alpha: 0.01,
            forgetting: 0.15,
            statistic: StatisticMode::Floored,
            window_state_error: None,
            window_attack_error: None,
            window_state_trace: None,
            window_attack_trace: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    Error::Config(format!("line {line}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn vehicle_params(&self) -> VehicleParams {
        VehicleParams {
            l_f: self.l_f,
            l_r: self.l_r,
            sample_time: self.sample_time,
            x_max: self.x_max,
            y_max: self.y_max,
            v_max: self.v_max,
            steering_max: self.steering_max,
            accel_max: self.accel_max,
            q_diag: self.q_diag,
            r_diag: self.r_diag,
        }
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.initial_state)
    }

    pub fn initial_estimate(&self) -> DVector<f64> {
        DVector::from_column_slice(
            self.initial_estimate
                .as_ref()
                .unwrap_or(&self.initial_state),
        )
    }

    pub fn initial_covariance(&self) -> DMatrix<f64> {
        DMatrix::identity(4, 4) * self.initial_covariance
    }

    pub fn windows(&self) -> Windows {
        let k = self.horizon;
        let resolve = |w: Option<[usize; 2]>, lo: usize| {
            let [lo, hi] = w.unwrap_or([lo.min(k), k]);
            Window { lo, hi }
        };
        Windows {
            state_error: resolve(self.window_state_error, 0),
            attack_error: resolve(self.window_attack_error, 0),
            state_trace: resolve(self.window_state_trace, 0),
            attack_trace: resolve(self.window_attack_trace, 100),
        }
    }

    /// Checks ranges and window bounds.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        self.vehicle_params().check().map_err(Error::Config)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.forgetting) {
            return bad(format!(
                "forgetting must lie in [0, 1), got {}",
                self.forgetting
            ));
        }
        if !(self.initial_covariance > 0.0 && self.initial_covariance.is_finite()) {
            return bad("initial_covariance must be positive".into());
        }
        for (name, s) in [
            ("process_noise_scale", self.process_noise_scale),
            ("measurement_noise_scale", self.measurement_noise_scale),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be nonnegative"));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.initial_state)
            || !finite(self.initial_estimate.as_ref().map_or(&[][..], |v| &v[..]))
            || !finite(&self.control)
        {
            return bad("initial state, estimate and control must be finite".into());
        }
        for (name, w) in [
            ("window_state_error", self.window_state_error),
            ("window_attack_error", self.window_attack_error),
            ("window_state_trace", self.window_state_trace),
            ("window_attack_trace", self.window_attack_trace),
        ] {
            if let Some([lo, hi]) = w {
                if lo > hi || hi > self.horizon {
                    return bad(format!(
                        "{name} = [{lo}, {hi}] must satisfy lo <= hi <= horizon ({})",
                        self.horizon
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        let w = c.windows();
        assert_eq!(w.attack_trace, Window { lo: 100, hi: 1000 });
        assert_eq!(w.state_error, Window { lo: 0, hi: 1000 });
    }

    #[test]
    fn parses_keys() {
        let c = ScenarioConfig::from_toml_str(
            "horizon = 50\nseed = 7\nattack = \"none\"\ncontrol = [0.1, 1.0]\nwindow_attack_trace = [10, 40]\n",
        )
        .unwrap();
        assert_eq!(c.horizon, 50);
        assert_eq!(c.seed, 7);
        assert_eq!(c.attack, AttackKind::None);
        assert_eq!(c.control, [0.1, 1.0]);
        assert_eq!(c.windows().attack_trace, Window { lo: 10, hi: 40 });
        assert_eq!(c.windows().state_trace, Window { lo: 0, hi: 50 });
    }

    #[test]
    fn short_horizon_clamps_default_window() {
        let c = ScenarioConfig::from_toml_str("horizon = 50").unwrap();
        assert_eq!(c.windows().attack_trace, Window { lo: 50, hi: 50 });
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "horizon = 0",
            "alpha = 1.5",
            "forgetting = 1.0",
            "window_state_error = [5, 2]",
            "window_state_error = [0, 2000]",
            "l_r = -1.0",
            "unknown_key = 3",
            "statistic = \"bogus\"",
        ] {
            assert!(ScenarioConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ScenarioConfig {
            initial_estimate: Some([1.0, 2.0, 0.0, 9.0]),
            window_state_trace: Some([3, 9]),
            ..Default::default()
        };
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }
}
