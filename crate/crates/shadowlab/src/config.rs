//! Experiment configuration: one diff-able TOML file with flat, typed
//! keys. Identical config + seed reproduces a byte-identical report body.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::IntegrateOpts;
use crate::models::ModelSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub name: String,
    pub params: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { name: "lorenz".into(), params: vec![10.0, 28.0, 8.0 / 3.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub escape_norm: f64,
    pub speed_cap_scale: f64,
    pub speed_cap_floor: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let o = IntegrateOpts::default();
        Self {
            abs_tol: o.abs_tol,
            rel_tol: o.rel_tol,
            max_step: o.max_step,
            escape_norm: o.escape_norm,
            speed_cap_scale: o.speed_cap_scale,
            speed_cap_floor: o.speed_cap_floor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub transient: f64,
    pub duration: f64,
    pub count: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { transient: 100.0, duration: 1000.0, count: 100_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Start point for perturbed-chain recipes (model fallback otherwise).
    pub x0: Option<[f64; 3]>,
    pub segments: usize,
    pub segment_duration: f64,
    pub t_min: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { x0: None, segments: 10, segment_duration: 1.0, t_min: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TracingConfig {
    pub epsilon: f64,
    /// Derive epsilon from the certified landmark radius (beta / 4).
    pub auto_epsilon: bool,
    pub class: String,
    pub eps_rep: f64,
    pub delta_schedule: Vec<f64>,
    pub candidate_budget: usize,
    pub subsample: usize,
    pub refine: usize,
    pub z_span_factor: f64,
    pub z_span_pad: f64,
    pub arc_step_fraction: f64,
}

impl Default for TracingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            auto_epsilon: false,
            class: "weak".into(),
            eps_rep: 0.2,
            delta_schedule: vec![1e-1, 1e-2, 1e-3],
            candidate_budget: 12_000,
            subsample: 10_000,
            refine: 2_000,
            z_span_factor: 2.0,
            z_span_pad: 5.0,
            arc_step_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionsConfig {
    pub offset: f64,
    pub half_leaf: f64,
    pub half_trans: f64,
    pub gamma: f64,
    pub cert_launches: usize,
}

impl Default for SectionsConfig {
    fn default() -> Self {
        Self { offset: 1.0, half_leaf: 0.5, half_trans: 0.5, gamma: 0.5, cert_launches: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub recipe: String,
    /// 0 = all available cores.
    pub workers: usize,
    pub model: ModelConfig,
    pub integrator: IntegratorConfig,
    pub sample: SampleConfig,
    pub chain: ChainConfig,
    pub tracing: TracingConfig,
    pub sections: SectionsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            recipe: "fpotp-failure".into(),
            workers: 0,
            model: ModelConfig::default(),
            integrator: IntegratorConfig::default(),
            sample: SampleConfig::default(),
            chain: ChainConfig::default(),
            tracing: TracingConfig::default(),
            sections: SectionsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn integrate_opts(&self) -> IntegrateOpts {
        IntegrateOpts {
            abs_tol: self.integrator.abs_tol,
            rel_tol: self.integrator.rel_tol,
            max_step: self.integrator.max_step,
            escape_norm: self.integrator.escape_norm,
            speed_cap_scale: self.integrator.speed_cap_scale,
            speed_cap_floor: self.integrator.speed_cap_floor,
            max_steps: 20_000_000,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match self.model.name.as_str() {
            "lorenz" => {
                let p = pad(&self.model.params, &[10.0, 28.0, 8.0 / 3.0]);
                Ok(ModelSpec::Lorenz { sigma: p[0], rho: p[1], beta: p[2] })
            }
            "saddle" => {
                let p = pad(&self.model.params, &[2.0, 3.0, 1.0]);
                Ok(ModelSpec::Saddle { ls1: p[0], ls2: p[1], lu: p[2] })
            }
            "limit-cycle" => {
                let p = pad(&self.model.params, &[1.0]);
                Ok(ModelSpec::LimitCycle { a: p[0] })
            }
            other => Err(Error::UnknownModel(other.into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tracing;
        if t.delta_schedule.is_empty() {
            return Err(Error::Config("delta schedule must be nonempty".into()));
        }
        if !t.delta_schedule.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("delta schedule must strictly decrease".into()));
        }
        if t.delta_schedule.iter().any(|&d| d <= 0.0) {
            return Err(Error::Config("deltas must be positive".into()));
        }
        if t.epsilon <= 0.0 && !t.auto_epsilon {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        for (name, v) in [
            ("integrator.abs_tol", self.integrator.abs_tol),
            ("integrator.rel_tol", self.integrator.rel_tol),
            ("integrator.max_step", self.integrator.max_step),
            ("integrator.escape_norm", self.integrator.escape_norm),
            ("sample.duration", self.sample.duration),
            ("chain.segment_duration", self.chain.segment_duration),
            ("chain.t_min", self.chain.t_min),
            ("sections.offset", self.sections.offset),
            ("sections.half_leaf", self.sections.half_leaf),
            ("sections.half_trans", self.sections.half_trans),
            ("sections.gamma", self.sections.gamma),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sample.transient < 0.0 {
            return Err(Error::Config("sample.transient must be nonnegative".into()));
        }
        match self.tracing.class.as_str() {
            "weak" | "normal" | "strong" => {}
            other => return Err(Error::Config(format!("unknown tracing class `{other}`"))),
        }
        match self.recipe.as_str() {
            "fpotp-failure" | "hyperbolic-control" => {}
            other => return Err(Error::Config(format!("unknown recipe `{other}`"))),
        }
        Ok(())
    }

    pub fn trace_class(&self) -> crate::verify::TraceClass {
        match self.tracing.class.as_str() {
            "normal" => crate::verify::TraceClass::Normal,
            "strong" => crate::verify::TraceClass::Strong { eps_rep: self.tracing.eps_rep },
            _ => crate::verify::TraceClass::Weak,
        }
    }
}

fn pad(given: &[f64], def: &[f64]) -> Vec<f64> {
    let mut out = def.to_vec();
    for (i, &v) in given.iter().enumerate().take(def.len()) {
        out[i] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let parsed = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(parsed.seed, cfg.seed);
        assert_eq!(parsed.tracing.delta_schedule, cfg.tracing.delta_schedule);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 7\n[tracing]\nepsilon = 0.1\ndelta_schedule = [0.1, 0.01]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tracing.epsilon, 0.1);
        assert_eq!(cfg.sample.count, 100_000);
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert!(ExperimentConfig::from_toml("[tracing]\ndelta_schedule = []\n").is_err());
        assert!(
            ExperimentConfig::from_toml("[tracing]\ndelta_schedule = [0.01, 0.1]\n").is_err()
        );
        assert!(ExperimentConfig::from_toml("recipe = \"nope\"\n").is_err());
    }
}
