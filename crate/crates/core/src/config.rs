//! TOML configuration files.
//!
//! Keys are flat with dotted section names (`design.alpha`,
//! `run.replications`, ...). Unknown keys are rejected so that a typo never
//! silently falls back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decision::{DecisionRule, InterimSnapshot, PopulationInterim, ZoneThresholds};
use crate::error::{Error, Result};
use crate::experiments::{alternative_grid, null_grid, LabeledScenario, ScenarioGrid};
use crate::power::{
    predict_statistic, Convention, HistoricalModel, InfoFraction, McpWeight, Population, StageCounts, SurrogateReadout,
};
use crate::sim::{variant_serde, DesignSpec};

/// Seed used when neither the command line nor the environment gives one.
pub const DEFAULT_SEED: u64 = 20_240_607;

/// Documentation of every configuration key, shown by `--help`.
pub const CONFIG_KEYS: &str = "\
Simulation configs (simulate, calibrate):
  run.name                  stem of the output files (default \"results\")
  run.seed                  base seed; overridden by --seed and ENRICHSIM_SEED
  run.replications          trials per scenario and variant (default 10000)
  run.variants              designs to run: \"none\", \"w1\", \"w2\", \"w3\" (default [\"none\", \"w1\"])
  grid.kind                 \"alternatives\" (36 scenarios), \"null\" (3 correlations) or \"custom\"
  grid.sets                 restrict alternatives to these sets, e.g. [\"a\"]
  grid.phi, grid.rho        restrict alternatives to these offsets / correlations
  [[scenario]]              custom scenarios: label, hr_full, hr_subgroup, theta_full,
                            theta_subgroup, rho, and optionally phi, tau, control_median (months),
                            p_control_full, p_control_subgroup
  design.alpha              one-sided level (0.025)
  design.target_power       conditional power targeted by re-estimation (0.9)
  design.d1_interim         full-population events triggering the interim (40)
  design.d1_total           first-cohort events closing stage one (60)
  design.d2_planned         planned second-stage events (100)
  design.cap_multiplier     cap on total events relative to the planned total (1.4)
  design.cohort1_size       first-cohort subjects (100)
  design.cohort2_size       second-cohort subjects (200)
  design.accrual1           first-cohort subjects per month (8)
  design.accrual2           second-cohort subjects per month (15)
  design.accrual_process    \"uniform\" or \"poisson\"
  design.screening          enrichment screening: \"skip\" or \"dilute\"
  design.futility           enable the futility zone (true)
  design.mcp_variant        design used when run.variants is absent
  design.surrogate_noise_sd noise sd added to the observed surrogate effect (0)
  design.theta_source       \"truth\" or \"empirical\"
  design.cp_information     \"observed_plus_increment\", \"observed_to_total\" or \"planned\"
  design.weight_fraction    \"total\" (interim/planned total) or \"stage_one\" (interim/stage one)
  design.stage_two          \"second_cohort\" or \"cumulative\"
  design.thresholds.{favorable, promising_full, enrichment_subgroup, futility_full, futility_subgroup}

Interim decision configs (decide):
  decide.alpha, decide.target_power, decide.variant (\"none\", \"w1\", \"w2\", \"w3\")
  decide.info_fraction      interim information fraction t used by the weights
  decide.fc_t               control-arm event probability at t (needed by w3)
  decide.convention         sign of the statistics below: \"log_rank\" or \"oriented\"
  decide.thresholds.*       as design.thresholds
  full.*, subgroup.*        z1 (interim statistic), n1 (interim events), n2 (planned total
                            events), cap_total (event cap), and either theta_hat (observed
                            surrogate effect, fed to the model) or predicted (statistic)
  full.surrogate            \"risk_difference\" (checked to lie in [-1, 1]) or \"effect\"
  model.intercept, model.slope, model.convention  historical surrogate model

Analysis configs (analyze):
  analyze.data              CSV with columns arm,subgroup,enroll_month,event_month
  analyze.final_cut         calendar month of the analysis
  analyze.stage1_cut        optional end of stage one; enables the closed test
  analyze.selected          \"full\" or \"subgroup\" (population carried into stage two)
  analyze.alpha, analyze.planned_n1, analyze.planned_n2   test level and planned events

Sizing configs (size; flags override):
  size.hr_alt, size.alpha (one-sided), size.power, size.margin (null hazard ratio, 1
  for superiority), size.allocation (treatment:control)
";

fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub seed: Option<u64>,
    pub replications: u64,
    pub variants: Option<Vec<String>>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { name: "results".into(), seed: None, replications: 10_000, variants: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Alternatives,
    Null,
    Custom,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub kind: GridKind,
    pub sets: Option<Vec<String>>,
    pub phi: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(default, rename = "scenario", skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<LabeledScenario>,
}

pub fn parse_variant(s: &str) -> Result<Option<McpWeight>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    McpWeight::parse(s)
        .map(Some)
        .ok_or_else(|| Error::Config(format!("unknown variant `{s}`, expected none, w1, w2 or w3")))
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse(text, "config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = parse(&read(path)?, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate().map_err(|e| Error::Config(format!("design: {e}")))?;
        self.variants()?;
        if self.grid.kind == GridKind::Custom && self.scenarios.is_empty() {
            return Err(Error::Config("grid.kind = \"custom\" needs at least one [[scenario]]".into()));
        }
        if self.grid.kind != GridKind::Custom && !self.scenarios.is_empty() {
            return Err(Error::Config("[[scenario]] entries need grid.kind = \"custom\"".into()));
        }
        for s in &self.scenarios {
            s.scenario.validate().map_err(|e| Error::Config(format!("scenario `{}`: {e}", s.label)))?;
        }
        self.grid(self.run.replications)?.validate().map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn variants(&self) -> Result<Vec<Option<McpWeight>>> {
        match &self.run.variants {
            Some(v) if v.is_empty() => Err(Error::Config("run.variants must not be empty".into())),
            Some(v) => v.iter().map(|s| parse_variant(s)).collect(),
            None => Ok(vec![self.design.mcp_variant]),
        }
    }

    /// The grid this config describes, at `replications` per cell.
    pub fn grid(&self, replications: u64) -> Result<ScenarioGrid> {
        let variants = self.variants()?;
        let mut grid = match self.grid.kind {
            GridKind::Alternatives => alternative_grid(replications, variants),
            GridKind::Null => null_grid(replications, variants, self.design.futility),
            GridKind::Custom => ScenarioGrid {
                scenarios: self.scenarios.clone(),
                replications,
                variants,
                futility: self.design.futility,
            },
        };
        grid.futility = self.design.futility;
        let keep = |s: &LabeledScenario| {
            let set = s.label.split('/').next().unwrap_or("");
            self.grid.sets.as_ref().is_none_or(|v| v.iter().any(|x| x == set))
                && self.grid.phi.as_ref().is_none_or(|v| v.iter().any(|&p| (p - s.scenario.phi).abs() < 1e-12))
                && self.grid.rho.as_ref().is_none_or(|v| v.iter().any(|&r| (r - s.scenario.rho).abs() < 1e-12))
        };
        if self.grid.kind != GridKind::Custom {
            grid.scenarios.retain(keep);
        }
        if grid.scenarios.is_empty() {
            return Err(Error::Config("grid filters leave no scenario".into()));
        }
        Ok(grid)
    }
}

/// How an observed surrogate effect is checked before entering the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateScale {
    #[default]
    RiskDifference,
    Effect,
}

/// Observed interim values for one population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationInput {
    /// Interim statistic in `decide.convention`.
    pub z1: f64,
    pub n1: f64,
    pub n2: f64,
    pub cap_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<f64>,
    #[serde(default)]
    pub surrogate: SurrogateScale,
    /// Predicted statistic in `decide.convention`, bypassing the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub target_power: f64,
    #[serde(default = "default_variant", with = "variant_serde")]
    pub variant: Option<McpWeight>,
    pub info_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_t: Option<f64>,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default)]
    pub thresholds: ZoneThresholds,
}

fn default_alpha() -> f64 {
    0.025
}

fn default_power() -> f64 {
    0.9
}

fn default_variant() -> Option<McpWeight> {
    Some(McpWeight::Linear)
}

/// One-shot interim decision inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideConfig {
    pub decide: DecideSection,
    pub full: PopulationInput,
    pub subgroup: PopulationInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<HistoricalModel>,
}

impl DecideConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse(text, "config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse(&read(path)?, &path.display().to_string())
    }

    pub fn rule(&self) -> DecisionRule {
        DecisionRule {
            alpha: self.decide.alpha,
            target_power: self.decide.target_power,
            thresholds: self.decide.thresholds,
            variant: self.decide.variant,
        }
    }

    /// Oriented prediction for one population, if it can be formed.
    pub fn prediction(&self, p: Population) -> Result<Option<f64>> {
        let input = self.population(p);
        let conv = self.decide.convention;
        if let Some(f) = input.predicted {
            return Ok(Some(conv.to_oriented(f)));
        }
        let (Some(theta), Some(model)) = (input.theta_hat, self.model) else {
            return Ok(None);
        };
        let readout = match input.surrogate {
            SurrogateScale::RiskDifference => SurrogateReadout::risk_difference(theta, p)?,
            SurrogateScale::Effect => SurrogateReadout::effect(theta, p)?,
        };
        Ok(Some(predict_statistic(&model, &readout)))
    }

    pub fn population(&self, p: Population) -> &PopulationInput {
        match p {
            Population::Full => &self.full,
            Population::Subgroup => &self.subgroup,
        }
    }

    /// Builds the interim snapshot, listing every missing field at once.
    pub fn snapshot(&self) -> Result<InterimSnapshot> {
        let mut missing = Vec::new();
        let mut pops = Vec::with_capacity(2);
        for (p, key) in [(Population::Full, "full"), (Population::Subgroup, "subgroup")] {
            let input = self.population(p);
            let predicted = self.prediction(p)?;
            if self.decide.variant.is_some() && predicted.is_none() {
                if input.theta_hat.is_none() {
                    missing.push(format!("{key}.theta_hat (or {key}.predicted)"));
                }
                if self.model.is_none() && input.theta_hat.is_some() {
                    missing.push("model.intercept / model.slope".to_owned());
                }
            }
            let counts = StageCounts::new(input.n1, input.n2).map_err(|e| Error::Config(format!("{key}: {e}")))?;
            pops.push(PopulationInterim {
                z1: self.decide.convention.to_oriented(input.z1),
                counts,
                cap_total: input.cap_total,
                predicted,
            });
        }
        if self.decide.variant == Some(McpWeight::ControlCdfHarmonic) && self.decide.fc_t.is_none() {
            missing.push("decide.fc_t".to_owned());
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::Config(format!("missing fields: {}", missing.join(", "))));
        }
        Ok(InterimSnapshot {
            full: pops[0],
            subgroup: pops[1],
            info: InfoFraction::new(self.decide.info_fraction, self.decide.fc_t)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub data: PathBuf,
    pub final_cut: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_cut: Option<f64>,
    #[serde(default = "default_selected")]
    pub selected: Population,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_planned_n1")]
    pub planned_n1: f64,
    #[serde(default = "default_planned_n2")]
    pub planned_n2: f64,
}

fn default_selected() -> Population {
    Population::Full
}

fn default_planned_n1() -> f64 {
    60.0
}

fn default_planned_n2() -> f64 {
    160.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub analyze: AnalyzeSection,
}

impl AnalyzeConfig {
    /// Loads the config; a relative data path is taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = parse(&read(path)?, &path.display().to_string())?;
        if cfg.analyze.data.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.analyze.data = dir.join(&cfg.analyze.data);
            }
        }
        Ok(cfg)
    }
}

/// Event-count sizing inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeSection {
    pub hr_alt: f64,
    /// One-sided level.
    pub alpha: f64,
    pub power: f64,
    /// Null hazard ratio; below 1 for a non-inferiority style margin.
    pub margin: f64,
    /// Treatment:control allocation.
    pub allocation: f64,
}

impl Default for SizeSection {
    fn default() -> Self {
        Self { hr_alt: 0.6, alpha: 0.025, power: 0.9, margin: 1.0, allocation: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConfig {
    #[serde(default)]
    pub size: SizeSection,
}

impl SizeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse(&read(path)?, &path.display().to_string())
    }
}

/// Seed precedence: explicit flag, then `ENRICHSIM_SEED`, then the config,
/// then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v.trim().parse().map_err(|_| Error::Config(format!("ENRICHSIM_SEED must be an unsigned integer, got `{v}`")));
    }
    Ok(config.unwrap_or(DEFAULT_SEED))
}
