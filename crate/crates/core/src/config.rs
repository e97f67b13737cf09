//! Run configuration shared by the CLI subcommands.
//!
//! Every key can come from a JSON file and be overridden by the matching
//! command-line flag. After overrides the config is resolved (defaults filled
//! in per model and experiment) and validated before anything runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    Example1SweepConfig, ProfileConfig, Table1Config, PROFILE_DELTAS, TABLE1_DELTAS,
};
use crate::likelihood::Method;
use crate::linalg::Vector;
use crate::model::{Frozen, ModelConfig, ModelSpec, Trajectory};
use crate::report::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Sqrt,
    Conventional,
    #[default]
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Sqrt => vec![Method::SquareRoot],
            MethodChoice::Conventional => vec![Method::Conventional],
            MethodChoice::Both => vec![Method::Conventional, Method::SquareRoot],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Example1,
    Example3,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// JSON file holding a custom model (`{"kind": "custom", ...}`).
    pub model_file: Option<PathBuf>,
    pub delta_t: f64,
    pub delta: f64,
    /// Pin the model at θ so it no longer depends on the parameters.
    pub freeze: bool,
    pub theta: Option<Vec<f64>>,
    /// Parameters the data are simulated at; defaults to `theta`.
    pub theta_true: Option<Vec<f64>>,
    pub n_steps: usize,
    pub seed: u64,
    /// Measurements to use instead of simulating (CSV as written by `simulate`).
    pub data_file: Option<PathBuf>,
    pub tau_true: f64,
    pub tau_grid: Option<Vec<f64>>,
    pub delta_list: Option<Vec<f64>>,
    pub z1: Vec<f64>,
    pub mu_max: f64,
    pub method: MethodChoice,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Example1,
            model_file: None,
            delta_t: 0.1,
            delta: 1e-2,
            freeze: false,
            theta: None,
            theta_true: None,
            n_steps: 100,
            seed: 42,
            data_file: None,
            tau_true: 5.0,
            tau_grid: None,
            delta_list: None,
            z1: vec![1.0, 1.0],
            mu_max: 4.0,
            method: MethodChoice::Both,
            format: Format::Csv,
            out: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn all_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must contain only finite values"
        )))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Check every numeric field before anything is computed.
    pub fn validate(&self) -> Result<()> {
        positive("delta_t", self.delta_t)?;
        positive("delta", self.delta)?;
        positive("tau_true", self.tau_true)?;
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.mu_max >= 1.0 && self.mu_max.is_finite()) {
            return Err(Error::Config(format!(
                "mu_max must be finite and at least 1, got {}",
                self.mu_max
            )));
        }
        for (name, v) in [("theta", &self.theta), ("theta_true", &self.theta_true)] {
            if let Some(v) = v {
                all_finite(name, v)?;
            }
        }
        if let Some(grid) = &self.tau_grid {
            for &t in grid {
                positive("tau_grid entries", t)?;
            }
        }
        if let Some(list) = &self.delta_list {
            for &d in list {
                positive("delta_list entries", d)?;
            }
        }
        all_finite("z1", &self.z1)?;
        if self.z1.len() != 2 {
            return Err(Error::Config(format!(
                "z1 must have 2 entries, got {}",
                self.z1.len()
            )));
        }
        if self.model == ModelKind::Custom && self.model_file.is_none() {
            return Err(Error::Config("model \"custom\" requires model_file".into()));
        }
        Ok(())
    }

    fn base_model(&self) -> Result<Box<dyn ModelSpec>> {
        let cfg = match self.model {
            ModelKind::Example1 => ModelConfig::Example1 {
                delta_t: self.delta_t,
            },
            ModelKind::Example3 => ModelConfig::Example3 { delta: self.delta },
            ModelKind::Custom => {
                let path = self.model_file.as_ref().expect("validated");
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<ModelConfig>(&text).map_err(|e| {
                    Error::Config(format!("{}: invalid model JSON: {e}", path.display()))
                })?
            }
        };
        cfg.build().map_err(|e| match e {
            Error::Domain(m) | Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })
    }

    /// The model, frozen at θ if requested.
    pub fn build_model(&self) -> Result<Box<dyn ModelSpec>> {
        let base = self.base_model()?;
        if self.freeze {
            let theta = self.theta_for(base.as_ref())?;
            Ok(Box::new(Frozen::new(base, theta)?))
        } else {
            Ok(base)
        }
    }

    fn default_theta(&self, p: usize) -> Vec<f64> {
        match self.model {
            ModelKind::Example1 => vec![self.tau_true],
            ModelKind::Example3 => vec![2.0],
            ModelKind::Custom => vec![0.0; p],
        }
    }

    /// θ for evaluation, checked against the model's parameter count.
    pub fn theta_for(&self, spec: &dyn ModelSpec) -> Result<Vec<f64>> {
        let p = spec.dims().p;
        let theta = self.theta.clone().unwrap_or_else(|| self.default_theta(p));
        if theta.len() != p {
            return Err(Error::Config(format!(
                "model {} has {p} parameters, theta has {}",
                spec.name(),
                theta.len()
            )));
        }
        Ok(theta)
    }

    pub fn theta_true_for(&self, spec: &dyn ModelSpec) -> Result<Vec<f64>> {
        match &self.theta_true {
            Some(t) if t.len() != spec.dims().p => Err(Error::Config(format!(
                "model {} has {} parameters, theta_true has {}",
                spec.name(),
                spec.dims().p,
                t.len()
            ))),
            Some(t) => Ok(t.clone()),
            None => self.theta_for(spec),
        }
    }

    /// Measurements from `data_file`, or simulated at `theta_true`.
    pub fn data_for(&self, spec: &dyn ModelSpec) -> Result<Trajectory> {
        match &self.data_file {
            Some(path) => read_measurements(path, spec.dims().m),
            None => {
                crate::model::simulate(spec, &self.theta_true_for(spec)?, self.n_steps, self.seed)
            }
        }
    }

    pub fn example1_sweep(&self) -> Example1SweepConfig {
        let defaults = Example1SweepConfig::default();
        Example1SweepConfig {
            delta_t: self.delta_t,
            n_steps: self.n_steps,
            tau_true: self.tau_true,
            seed: self.seed,
            tau_grid: self.tau_grid.clone().unwrap_or(defaults.tau_grid),
        }
    }

    fn experiment_theta(&self) -> Result<f64> {
        match self.theta.as_deref() {
            None => Ok(2.0),
            Some([t]) => {
                positive("theta", *t)?;
                Ok(*t)
            }
            Some(t) => Err(Error::Config(format!(
                "Example 3 has 1 parameter, theta has {}",
                t.len()
            ))),
        }
    }

    pub fn table1(&self) -> Result<Table1Config> {
        Ok(Table1Config {
            deltas: self
                .delta_list
                .clone()
                .unwrap_or_else(|| TABLE1_DELTAS.to_vec()),
            theta: self.experiment_theta()?,
            z1: self.z1.clone(),
        })
    }

    pub fn perf_profile(&self) -> Result<ProfileConfig> {
        Ok(ProfileConfig {
            deltas: self
                .delta_list
                .clone()
                .unwrap_or_else(|| PROFILE_DELTAS.to_vec()),
            theta: self.experiment_theta()?,
            z1: self.z1.clone(),
            mu_max: self.mu_max,
        })
    }
}

/// Read measurement rows from a CSV with `z_1..z_m` columns (other columns,
/// such as `k` or `x_*`, are ignored).
pub fn read_measurements(path: &Path, m: usize) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers = rd
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .clone();
    let cols = (1..=m)
        .map(|i| {
            let name = format!("z_{i}");
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut z = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let values = cols
            .iter()
            .map(|&c| {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "{}: bad number on data row {}",
                            path.display(),
                            line + 1
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        z.push(Vector::from_vec(values));
    }
    Trajectory::new(z).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = RunConfig::from_json(r#"{"model": "example3", "delta": 1e-6, "method": "sqrt"}"#)
            .unwrap();
        assert_eq!(cfg.model, ModelKind::Example3);
        assert_eq!(cfg.method, MethodChoice::Sqrt);
        assert_eq!(cfg.n_steps, 100);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_json(r#"{"detla": 1}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        };
        bad(|c| c.delta = 0.0);
        bad(|c| c.delta_t = -1.0);
        bad(|c| c.n_steps = 0);
        bad(|c| c.tau_grid = Some(vec![1.0, -2.0]));
        bad(|c| c.delta_list = Some(vec![f64::NAN]));
        bad(|c| c.z1 = vec![1.0]);
        bad(|c| c.model = ModelKind::Custom);
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn theta_defaults_follow_model() {
        let c = RunConfig::default();
        let m = c.build_model().unwrap();
        assert_eq!(c.theta_for(m.as_ref()).unwrap(), vec![5.0]);
        let c = RunConfig {
            model: ModelKind::Example3,
            theta: Some(vec![1.0, 2.0]),
            ..Default::default()
        };
        let m = c.build_model().unwrap();
        assert!(matches!(c.theta_for(m.as_ref()), Err(Error::Config(_))));
    }
}
