//! Run configuration: a TOML file with `problem`, `[parameters]`, `[schedule]`,
//! `[tolerances]` and `[outputs]` sections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use serde::Deserialize;

use bzb_core::extremal::{shoot_extremal, ReferenceSchedule, ShootingGuess};
use bzb_core::geometry::ProblemDefinition;
use bzb_core::problems::{lookup, PROBLEM_NAMES};
use bzb_core::vehicle_bench::{oracle, VehicleInstance};
use bzb_core::Settings;

/// Variable holding the default output directory.
pub const OUT_DIR_VAR: &str = "BZB_OUT_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub tolerances: Settings,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    #[serde(default = "plus_one")]
    pub u1: f64,
    #[serde(default = "minus_one")]
    pub u3: f64,
    pub x0: Option<Vec<f64>>,
    pub xf: Option<Vec<f64>>,
    pub lambda0: Option<Vec<f64>>,
    pub shoot: Option<ShootConfig>,
    /// Take the schedule from the closed-form vehicle solution.
    #[serde(default)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootConfig {
    pub lambda0: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
    pub extremal: Option<PathBuf>,
    pub switching: Option<PathBuf>,
    pub clarke: Option<PathBuf>,
}

fn plus_one() -> f64 {
    1.0
}

fn minus_one() -> f64 {
    -1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if !PROBLEM_NAMES.contains(&self.problem.as_str()) {
            bail!("unknown problem '{}'; expected one of {}", self.problem, PROBLEM_NAMES.join(", "));
        }
        self.tolerances.validate().map_err(|e| anyhow!("tolerances: {e}"))?;
        let s = &self.schedule;
        if !s.oracle && s.lambda0.is_none() && s.shoot.is_none() {
            bail!("schedule needs lambda0 (with tau1, tau2), a [schedule.shoot] block, or oracle = true");
        }
        if s.lambda0.is_some() && s.shoot.is_some() {
            bail!("schedule gives both lambda0 and a shoot block");
        }
        if s.lambda0.is_some() && (s.tau1.is_none() || s.tau2.is_none()) {
            bail!("explicit schedule needs tau1 and tau2");
        }
        if s.oracle && self.problem != "vehicle" {
            bail!("oracle schedules exist only for the vehicle problem");
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemDefinition> {
        Ok(lookup(&self.problem, &self.parameters)?)
    }

    fn vehicle_target(&self) -> Result<f64> {
        self.parameters.get("X").copied().ok_or_else(|| anyhow!("vehicle problem needs parameter X"))
    }

    fn endpoints(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let s = &self.schedule;
        let given = |v: &Option<Vec<f64>>| v.as_ref().map(|v| DVector::from_vec(v.clone()));
        match (given(&s.x0), given(&s.xf)) {
            (Some(a), Some(b)) => Ok((a, b)),
            (a, b) if self.problem == "vehicle" => {
                let x = self.vehicle_target()?;
                Ok((a.unwrap_or_else(|| DVector::zeros(2)), b.unwrap_or_else(|| DVector::from_vec(vec![x, 0.0]))))
            }
            _ => bail!("schedule needs x0 and xf"),
        }
    }

    /// The reference schedule, shooting or evaluating the closed form when asked to.
    pub fn resolve_schedule(&self, problem: &ProblemDefinition) -> Result<ReferenceSchedule> {
        let s = &self.schedule;
        if s.oracle {
            let alpha = self.parameters.get("alpha").copied().ok_or_else(|| anyhow!("vehicle problem needs alpha"))?;
            let inst = VehicleInstance::new(alpha, self.vehicle_target()?, s.t_final);
            return Ok(oracle(&inst)?.schedule(&inst));
        }
        let (x0, xf) = self.endpoints()?;
        if let Some(l) = &s.lambda0 {
            let sched = ReferenceSchedule {
                t_final: s.t_final,
                tau1: s.tau1.unwrap_or(f64::NAN),
                tau2: s.tau2.unwrap_or(f64::NAN),
                u1: s.u1,
                u3: s.u3,
                x0,
                xf,
                lambda0: DVector::from_vec(l.clone()),
            };
            sched.validate(problem.n)?;
            return Ok(sched);
        }
        let g = s.shoot.as_ref().expect("checked at load");
        let guess = ShootingGuess { lambda0: DVector::from_vec(g.lambda0.clone()), tau1: g.tau1, tau2: g.tau2 };
        let out = shoot_extremal(problem, &x0, &xf, s.t_final, s.u1, s.u3, &guess, &self.tolerances)
            .context("stage shooting")?;
        Ok(out.schedule)
    }

    /// Copy with `name` set to `value`; `T` is the horizon, anything else a problem parameter.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        if name == "T" {
            cfg.schedule.t_final = value;
        } else if cfg.parameters.contains_key(name) {
            cfg.parameters.insert(name.to_string(), value);
        } else {
            bail!("unknown sweep parameter '{name}'; use T or one of [{}]", self.parameter_names().join(", "));
        }
        Ok(cfg)
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.keys().cloned().collect()
    }

    /// Output directory: command line, then config, then the environment, then the working directory.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.outputs.dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// `name` under `dir` unless an absolute path was configured.
pub fn output_path(dir: &Path, configured: Option<&PathBuf>, default: &str) -> PathBuf {
    match configured {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => dir.join(p),
        None => dir.join(default),
    }
}
