//! Patient-level simulation of one two-stage enrichment trial.
//!
//! A replication enrols a first cohort, cuts the interim at a fixed number of
//! full-population events, takes the interim decision, enrols a second cohort
//! (subgroup only after enrichment) and runs the closed test at the final cut.

use serde::{Deserialize, Serialize};

use crate::decision::{decide, DecisionRule, InterimDecision, InterimSnapshot, PopulationInterim, Zone, ZoneThresholds};
use crate::error::{Error, Result};
use crate::inference::{
    closed_test_increments, increment_statistic, logrank_from_observations, Arm, ClosedTestResult, LogRank,
    StageIncrements,
};
use crate::power::{InfoFraction, McpWeight, Population, StageCounts};
use crate::stats::{draw_bernoulli, draw_exponential, draw_normal, ExponentialLaw, RngStream};

/// True parameters of one simulated setting. Hazard ratios are
/// treatment over control; risk differences are treatment minus control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub hr_full: f64,
    pub hr_subgroup: f64,
    /// Control-arm median survival in months.
    #[serde(default = "default_control_median")]
    pub control_median: f64,
    #[serde(default = "default_p_control")]
    pub p_control_full: f64,
    #[serde(default = "default_p_control")]
    pub p_control_subgroup: f64,
    pub theta_full: f64,
    pub theta_subgroup: f64,
    /// Offset of the surrogate prediction from the truth.
    #[serde(default)]
    pub phi: f64,
    /// Correlation between the surrogate and the log-rank statistic, in
    /// log-rank sign (negative when both endpoints agree).
    pub rho: f64,
    /// Subgroup prevalence.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_control_median() -> f64 {
    14.0
}

fn default_p_control() -> f64 {
    0.2
}

fn default_tau() -> f64 {
    0.5
}

impl Scenario {
    /// No treatment effect on either endpoint.
    pub fn null(rho: f64) -> Self {
        Self {
            hr_full: 1.0,
            hr_subgroup: 1.0,
            control_median: 14.0,
            p_control_full: 0.2,
            p_control_subgroup: 0.2,
            theta_full: 0.0,
            theta_subgroup: 0.0,
            phi: 0.0,
            rho,
            tau: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::domain(m));
        if !(self.hr_full > 0.0 && self.hr_subgroup > 0.0 && self.hr_full.is_finite() && self.hr_subgroup.is_finite()) {
            return bad(format!("hazard ratios must be finite and > 0, got {} / {}", self.hr_full, self.hr_subgroup));
        }
        if !(self.control_median > 0.0 && self.control_median.is_finite()) {
            return bad(format!("control median must be > 0, got {}", self.control_median));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("|rho| must be < 1, got {}", self.rho));
        }
        if !self.phi.is_finite() {
            return bad("phi must be finite".into());
        }
        for (name, p, theta) in [
            ("subgroup", self.p_control_subgroup, self.theta_subgroup),
            ("complement", self.complement_p_control(), self.complement_theta()),
        ] {
            if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&(p + theta)) {
                return bad(format!("{name} response rates must lie in [0, 1], got control {p}, treatment {}", p + theta));
            }
        }
        Ok(())
    }

    /// Hazard ratio in the complement, chosen so that the log hazard ratios
    /// mix linearly in prevalence to the full-population value.
    pub fn complement_hr(&self) -> f64 {
        ((self.hr_full.ln() - self.tau * self.hr_subgroup.ln()) / (1.0 - self.tau)).exp()
    }

    pub fn complement_theta(&self) -> f64 {
        (self.theta_full - self.tau * self.theta_subgroup) / (1.0 - self.tau)
    }

    pub fn complement_p_control(&self) -> f64 {
        (self.p_control_full - self.tau * self.p_control_subgroup) / (1.0 - self.tau)
    }

    pub fn hr(&self, p: Population) -> f64 {
        match p {
            Population::Full => self.hr_full,
            Population::Subgroup => self.hr_subgroup,
        }
    }

    pub fn theta(&self, p: Population) -> f64 {
        match p {
            Population::Full => self.theta_full,
            Population::Subgroup => self.theta_subgroup,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccrualProcess {
    /// One subject every `1/rate` months.
    #[default]
    Uniform,
    /// Exponential gaps with mean `1/rate`.
    Poisson,
}

/// How enrichment screening consumes calendar time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Screening {
    /// Non-subgroup candidates are turned away at no cost; the accrual rate
    /// applies to enrolled subjects.
    #[default]
    Skip,
    /// Every candidate uses an accrual slot, so subgroup accrual is diluted.
    Dilute,
}

/// Where the interim surrogate effect comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    /// The true risk difference plus optional noise.
    #[default]
    Truth,
    /// The observed responder difference in the first cohort plus optional noise.
    Empirical,
}

/// Event counts fed to the interim conditional power.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CpInformation {
    /// Planned stage-one and total events for both populations.
    Planned,
    /// Observed interim events, with the planned increment on top.
    #[default]
    ObservedPlusIncrement,
    /// Observed interim events, up to the planned total.
    ObservedToTotal,
}

/// Denominator of the interim information fraction `t` in the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightFraction {
    /// Interim events over stage-one events (40/60 by default).
    StageOne,
    /// Interim events over planned total events (40/160 by default).
    #[default]
    Total,
}

/// Data behind the second-stage statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StageTwoData {
    /// The second cohort analysed on its own; stage one is the first cohort
    /// at its prespecified event count.
    #[default]
    SecondCohort,
    /// The increment of the cumulative statistic over all enrolled subjects.
    Cumulative,
}

/// Fixed design of the simulated trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSpec {
    pub alpha: f64,
    /// Conditional power targeted by re-estimation (`1 - β`).
    pub target_power: f64,
    /// Full-population events that trigger the interim.
    pub d1_interim: u32,
    /// First-cohort events that close stage one.
    pub d1_total: u32,
    /// Planned second-stage events.
    pub d2_planned: u32,
    /// Cap on total events as a multiple of the planned total.
    pub cap_multiplier: f64,
    pub cohort1_size: u32,
    pub cohort2_size: u32,
    /// Subjects per month.
    pub accrual1: f64,
    pub accrual2: f64,
    pub accrual_process: AccrualProcess,
    pub screening: Screening,
    pub thresholds: ZoneThresholds,
    pub futility: bool,
    /// `None` runs the benchmark design on plain conditional power.
    #[serde(with = "variant_serde")]
    pub mcp_variant: Option<McpWeight>,
    /// Standard deviation of the noise added to the observed surrogate effect.
    pub surrogate_noise_sd: f64,
    pub theta_source: ThetaSource,
    pub cp_information: CpInformation,
    pub weight_fraction: WeightFraction,
    pub stage_two: StageTwoData,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            alpha: 0.025,
            target_power: 0.9,
            d1_interim: 40,
            d1_total: 60,
            d2_planned: 100,
            cap_multiplier: 1.4,
            cohort1_size: 100,
            cohort2_size: 200,
            accrual1: 8.0,
            accrual2: 15.0,
            accrual_process: AccrualProcess::Uniform,
            screening: Screening::Skip,
            thresholds: ZoneThresholds::ONCOLOGY,
            futility: true,
            mcp_variant: Some(McpWeight::Linear),
            surrogate_noise_sd: 0.0,
            theta_source: ThetaSource::Truth,
            cp_information: CpInformation::ObservedPlusIncrement,
            weight_fraction: WeightFraction::Total,
            stage_two: StageTwoData::SecondCohort,
        }
    }
}

pub(crate) mod variant_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::power::McpWeight;

    pub fn serialize<S: Serializer>(v: &Option<McpWeight>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.map_or("none", |w| w.label()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<McpWeight>, D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        McpWeight::parse(&s)
            .map(Some)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown variant `{s}`, expected none, w1, w2 or w3")))
    }
}

impl DesignSpec {
    pub fn d_total_planned(&self) -> u32 {
        self.d1_total + self.d2_planned
    }

    pub fn cap_total(&self) -> u32 {
        (self.cap_multiplier * f64::from(self.d_total_planned()) - 1e-9).ceil() as u32
    }

    /// Interim information fraction used by the weight functions.
    pub fn info_fraction(&self) -> f64 {
        let denom = match self.weight_fraction {
            WeightFraction::StageOne => self.d1_total,
            WeightFraction::Total => self.d_total_planned(),
        };
        f64::from(self.d1_interim) / f64::from(denom)
    }

    pub fn effective_thresholds(&self) -> ZoneThresholds {
        if self.futility {
            self.thresholds
        } else {
            self.thresholds.without_futility()
        }
    }

    pub fn rule(&self) -> DecisionRule {
        DecisionRule {
            alpha: self.alpha,
            target_power: self.target_power,
            thresholds: self.effective_thresholds(),
            variant: self.mcp_variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::domain(m));
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if !(self.target_power > 0.5 && self.target_power < 1.0) {
            return bad(format!("target power must lie in (0.5, 1), got {}", self.target_power));
        }
        if !(1 <= self.d1_interim && self.d1_interim <= self.d1_total && self.d2_planned >= 1) {
            return bad(format!(
                "need 1 <= d1_interim <= d1_total and d2_planned >= 1, got {} / {} / {}",
                self.d1_interim, self.d1_total, self.d2_planned
            ));
        }
        if self.cohort1_size < self.d1_total {
            return bad(format!("cohort 1 ({}) cannot produce {} events", self.cohort1_size, self.d1_total));
        }
        if self.cohort2_size < 1 {
            return bad("cohort 2 must have at least one subject".into());
        }
        if !(self.cap_multiplier >= 1.0 && self.cap_multiplier.is_finite()) {
            return bad(format!("cap multiplier must be >= 1, got {}", self.cap_multiplier));
        }
        if !(self.accrual1 > 0.0 && self.accrual2 > 0.0) {
            return bad("accrual rates must be > 0".into());
        }
        if !(self.surrogate_noise_sd >= 0.0) {
            return bad("surrogate noise sd must be >= 0".into());
        }
        self.thresholds.validate()
    }
}

/// A simulated subject. Calendar times are in months from study start.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimSubject {
    pub arm: Arm,
    pub in_subgroup: bool,
    pub enroll: f64,
    pub event_time: f64,
    pub responder: bool,
}

impl SimSubject {
    fn in_population(&self, p: Population) -> bool {
        p == Population::Full || self.in_subgroup
    }

    fn event_calendar(&self) -> f64 {
        self.enroll + self.event_time
    }
}

/// Alternating 1:1 assignment within each stratum, kept across cohorts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Randomizer {
    next_treated: [bool; 2],
}

impl Randomizer {
    pub fn new() -> Self {
        Self { next_treated: [true; 2] }
    }

    pub fn assign(&mut self, in_subgroup: bool) -> Arm {
        let slot = &mut self.next_treated[usize::from(in_subgroup)];
        let arm = if *slot { Arm::Treatment } else { Arm::Control };
        *slot = !*slot;
        arm
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CohortPlan {
    pub size: u32,
    pub accrual_rate: f64,
    /// Calendar month of the first enrolment.
    pub start: f64,
    pub subgroup_only: bool,
    pub screening: Screening,
    pub process: AccrualProcess,
}

/// Per-stratum laws derived from a scenario.
#[derive(Clone, Copy, Debug)]
struct Strata {
    control: ExponentialLaw,
    // [complement, subgroup]
    treated: [ExponentialLaw; 2],
    p_control: [f64; 2],
    p_treated: [f64; 2],
}

impl Strata {
    fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let control = ExponentialLaw::from_median(sc.control_median)?;
        let pc = [sc.complement_p_control(), sc.p_control_subgroup];
        Ok(Self {
            control,
            treated: [control.scaled(sc.complement_hr())?, control.scaled(sc.hr_subgroup)?],
            p_control: pc,
            p_treated: [pc[0] + sc.complement_theta(), pc[1] + sc.theta_subgroup],
        })
    }
}

/// Enrols one cohort.
///
/// Per candidate the draws are: accrual gap (Poisson accrual only),
/// subgroup membership, then for enrolled subjects the event time and the
/// surrogate response.
pub fn generate_cohort(
    rng: &mut RngStream,
    plan: &CohortPlan,
    scenario: &Scenario,
    randomizer: &mut Randomizer,
) -> Result<Vec<SimSubject>> {
    if plan.size < 1 || !(plan.accrual_rate > 0.0) {
        return Err(Error::domain(format!("cohort needs size >= 1 and a positive accrual rate, got {plan:?}")));
    }
    let strata = Strata::new(scenario)?;
    let mut out = Vec::with_capacity(plan.size as usize);
    append_cohort(rng, plan, scenario, &strata, randomizer, &mut out)?;
    Ok(out)
}

fn append_cohort(
    rng: &mut RngStream,
    plan: &CohortPlan,
    scenario: &Scenario,
    strata: &Strata,
    randomizer: &mut Randomizer,
    out: &mut Vec<SimSubject>,
) -> Result<()> {
    let gap = 1.0 / plan.accrual_rate;
    let gap_law = ExponentialLaw::new(plan.accrual_rate)?;
    let mut slot = 0u64;
    let mut clock = plan.start;
    let mut enrolled = 0;
    while enrolled < plan.size {
        // Slot time of this candidate.
        let t = match plan.process {
            AccrualProcess::Uniform => plan.start + slot as f64 * gap,
            AccrualProcess::Poisson => clock + draw_exponential(rng, &gap_law),
        };
        let in_subgroup = rng.uniform() < scenario.tau;
        if plan.subgroup_only && !in_subgroup {
            // Skipped candidates give their slot back.
            if plan.screening == Screening::Dilute {
                slot += 1;
                clock = t;
            }
            continue;
        }
        clock = t;
        slot += 1;
        let arm = randomizer.assign(in_subgroup);
        let k = usize::from(in_subgroup);
        let (law, p) = match arm {
            Arm::Treatment => (&strata.treated[k], strata.p_treated[k]),
            Arm::Control => (&strata.control, strata.p_control[k]),
        };
        let event_time = draw_exponential(rng, law);
        let responder = draw_bernoulli(rng, p)?;
        out.push(SimSubject { arm, in_subgroup, enroll: t, event_time, responder });
        enrolled += 1;
    }
    Ok(())
}

/// Draws a surrogate-predicted statistic in log-rank sign from
/// `N(ln(hr)·√(m/4) + ρ(θ̂ + φ − θ), 1 − ρ²)`.
///
/// The caller negates the draw to obtain an oriented prediction.
pub fn draw_predicted_statistic(
    rng: &mut RngStream,
    scenario: &Scenario,
    population: Population,
    events_at_interim: u32,
    theta_hat: f64,
) -> Result<f64> {
    if events_at_interim < 1 {
        return Err(Error::domain("prediction needs at least one interim event"));
    }
    if !(scenario.rho.abs() < 1.0) {
        return Err(Error::domain(format!("|rho| must be < 1, got {}", scenario.rho)));
    }
    Ok(draw_prediction_unchecked(rng, scenario, population, f64::from(events_at_interim), theta_hat))
}

fn draw_prediction_unchecked(rng: &mut RngStream, sc: &Scenario, p: Population, m: f64, theta_hat: f64) -> f64 {
    let mean = sc.hr(p).ln() * (m / 4.0).sqrt() + sc.rho * (theta_hat + sc.phi - sc.theta(p));
    let sd = (1.0 - sc.rho * sc.rho).sqrt();
    mean + sd * rng.standard_normal()
}

/// What the interim analysis saw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimReadout {
    /// Calendar month of the interim cut.
    pub time: f64,
    pub z_full: f64,
    pub z_subgroup: f64,
    pub events_full: u32,
    pub events_subgroup: u32,
    pub theta_hat_full: f64,
    pub theta_hat_subgroup: f64,
    /// Oriented predictions.
    pub predicted_full: f64,
    pub predicted_subgroup: f64,
    pub fc_t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub interim: InterimReadout,
    pub decision: InterimDecision,
    pub test: ClosedTestResult,
    /// Stagewise statistics; absent when the trial stopped at interim.
    pub stages: Option<StageSummary>,
    /// Calendar month of the final cut (the interim for futility stops).
    pub duration: f64,
    /// Events behind the final analysis: the first cohort's stage-one events
    /// plus the second cohort's events in the selected population (or, for
    /// cumulative analyses, all events in the selected population). The
    /// interim event count for futility stops.
    pub total_events: u32,
}

impl ReplicationOutcome {
    pub fn zone(&self) -> Zone {
        self.decision.zone
    }

    pub fn success(&self) -> bool {
        self.test.reject_overall
    }
}

/// Reusable buffers for one worker.
#[derive(Default)]
pub struct Workspace {
    subjects: Vec<SimSubject>,
    times: Vec<f64>,
    obs: Vec<(f64, bool, bool)>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

// Calendar time of the k-th (1-based) event among `subjects` in `p`; the
// last event if fewer than k exist.
fn kth_event_time(subjects: &[SimSubject], p: Population, k: u32, buf: &mut Vec<f64>) -> Option<f64> {
    buf.clear();
    buf.extend(subjects.iter().filter(|s| s.in_population(p)).map(SimSubject::event_calendar));
    if buf.is_empty() {
        return None;
    }
    let idx = (k.max(1) as usize - 1).min(buf.len() - 1);
    let (_, v, _) = buf.select_nth_unstable_by(idx, f64::total_cmp);
    Some(*v)
}

fn logrank_at(subjects: &[SimSubject], p: Population, cut: f64, obs: &mut Vec<(f64, bool, bool)>) -> Result<LogRank> {
    obs.clear();
    obs.extend(subjects.iter().filter(|s| s.in_population(p) && s.enroll < cut).map(|s| {
        let window = cut - s.enroll;
        let event = s.enroll + s.event_time <= cut;
        (if event { s.event_time } else { window }, event, s.arm == Arm::Treatment)
    }));
    logrank_from_observations(obs, p)
}

// Zero-event populations carry no evidence: statistic 0 on 0 events.
fn logrank_or_flat(subjects: &[SimSubject], p: Population, cut: f64, obs: &mut Vec<(f64, bool, bool)>) -> Result<LogRank> {
    match logrank_at(subjects, p, cut, obs) {
        Err(Error::UndefinedStatistic(_)) => Ok(LogRank { z: 0.0, events: 0, o_minus_e: 0.0, variance: 0.0 }),
        other => other,
    }
}

fn responder_difference(subjects: &[SimSubject], p: Population, cut: f64) -> f64 {
    let mut n = [0u32; 2];
    let mut r = [0u32; 2];
    for s in subjects.iter().filter(|s| s.in_population(p) && s.enroll < cut) {
        let k = usize::from(s.arm == Arm::Treatment);
        n[k] += 1;
        r[k] += u32::from(s.responder);
    }
    if n[0] == 0 || n[1] == 0 {
        return 0.0;
    }
    f64::from(r[1]) / f64::from(n[1]) - f64::from(r[0]) / f64::from(n[0])
}

// Control-arm event probability at the mean control follow-up.
fn control_cdf_at_interim(subjects: &[SimSubject], cut: f64, control: &ExponentialLaw) -> f64 {
    let (mut sum, mut n) = (0.0, 0.0);
    for s in subjects.iter().filter(|s| s.arm == Arm::Control && s.enroll < cut) {
        sum += s.event_time.min(cut - s.enroll);
        n += 1.0;
    }
    if n == 0.0 {
        0.0
    } else {
        control.cdf(sum / n)
    }
}

fn interim_counts(spec: &DesignSpec, observed: u32) -> Result<(StageCounts, f64)> {
    let planned_total = f64::from(spec.d_total_planned());
    let cap_total = f64::from(spec.cap_total());
    let m = f64::from(observed.max(1));
    match spec.cp_information {
        CpInformation::Planned => Ok((StageCounts::new(f64::from(spec.d1_total), planned_total)?, cap_total)),
        CpInformation::ObservedPlusIncrement => {
            let incr = f64::from(spec.d2_planned);
            Ok((StageCounts::new(m, m + incr)?, m + cap_total - f64::from(spec.d1_total)))
        }
        CpInformation::ObservedToTotal => {
            let n2 = planned_total.max(m + 1.0);
            Ok((StageCounts::new(m, n2)?, cap_total.max(n2)))
        }
    }
}

/// Runs one replication with a fresh workspace.
pub fn run_replication(rng: &mut RngStream, scenario: &Scenario, spec: &DesignSpec) -> Result<ReplicationOutcome> {
    run_replication_with(rng, scenario, spec, &mut Workspace::new())
}

/// Runs one replication reusing `ws` for scratch storage.
pub fn run_replication_with(
    rng: &mut RngStream,
    scenario: &Scenario,
    spec: &DesignSpec,
    ws: &mut Workspace,
) -> Result<ReplicationOutcome> {
    spec.validate()?;
    let strata = Strata::new(scenario)?;
    let Workspace { subjects, times, obs } = ws;
    subjects.clear();
    let mut randomizer = Randomizer::new();

    let plan1 = CohortPlan {
        size: spec.cohort1_size,
        accrual_rate: spec.accrual1,
        start: 0.0,
        subgroup_only: false,
        screening: spec.screening,
        process: spec.accrual_process,
    };
    append_cohort(rng, &plan1, scenario, &strata, &mut randomizer, subjects)?;
    let n1 = subjects.len();
    let enroll_end = subjects.iter().map(|s| s.enroll).fold(0.0, f64::max);

    // Interim cut.
    let t_int = kth_event_time(subjects, Population::Full, spec.d1_interim, times).expect("cohort 1 is non-empty");
    let lr_f = logrank_or_flat(subjects, Population::Full, t_int, obs)?;
    let lr_s = logrank_or_flat(subjects, Population::Subgroup, t_int, obs)?;

    let base_theta = |p| match spec.theta_source {
        ThetaSource::Truth => scenario.theta(p),
        ThetaSource::Empirical => responder_difference(subjects, p, t_int),
    };
    let th_f = draw_normal(rng, base_theta(Population::Full), spec.surrogate_noise_sd)?;
    let th_s = draw_normal(rng, base_theta(Population::Subgroup), spec.surrogate_noise_sd)?;
    // Both predictions are always drawn so that every design sees the same stream.
    let f_f = -draw_prediction_unchecked(rng, scenario, Population::Full, f64::from(lr_f.events.max(1)), th_f);
    let f_s = -draw_prediction_unchecked(rng, scenario, Population::Subgroup, f64::from(lr_s.events.max(1)), th_s);
    let fc_t = control_cdf_at_interim(subjects, t_int, &strata.control);

    let (counts_f, cap_f) = interim_counts(spec, lr_f.events)?;
    let (counts_s, cap_s) = interim_counts(spec, lr_s.events)?;
    let snapshot = InterimSnapshot {
        full: PopulationInterim { z1: lr_f.z, counts: counts_f, cap_total: cap_f, predicted: Some(f_f) },
        subgroup: PopulationInterim { z1: lr_s.z, counts: counts_s, cap_total: cap_s, predicted: Some(f_s) },
        info: InfoFraction::new(spec.info_fraction(), Some(fc_t))?,
    };
    let decision = decide(&snapshot, &spec.rule())?;
    let interim = InterimReadout {
        time: t_int,
        z_full: lr_f.z,
        z_subgroup: lr_s.z,
        events_full: lr_f.events,
        events_subgroup: lr_s.events,
        theta_hat_full: th_f,
        theta_hat_subgroup: th_s,
        predicted_full: f_f,
        predicted_subgroup: f_s,
        fc_t,
    };
    let Some(selected) = decision.selected else {
        return Ok(ReplicationOutcome {
            interim,
            decision,
            test: ClosedTestResult::none(),
            stages: None,
            duration: t_int,
            total_events: lr_f.events,
        });
    };

    let plan2 = CohortPlan {
        size: spec.cohort2_size,
        accrual_rate: spec.accrual2,
        start: t_int.max(enroll_end),
        subgroup_only: selected == Population::Subgroup,
        screening: spec.screening,
        process: spec.accrual_process,
    };
    append_cohort(rng, &plan2, scenario, &strata, &mut randomizer, subjects)?;

    // Stage one closes at the d1_total-th first-cohort event.
    let cohort1 = &subjects[..n1];
    let t1 = kth_event_time(cohort1, Population::Full, spec.d1_total, times).expect("cohort 1 is non-empty");
    let s1_f = logrank_or_flat(cohort1, Population::Full, t1, obs)?;
    let s1_s = logrank_or_flat(cohort1, Population::Subgroup, t1, obs)?;

    let planned = StageCounts::new(f64::from(spec.d1_total), f64::from(spec.d_total_planned()))?;
    let (inc, d2_s, d2_f, t_final, total_events) = match spec.stage_two {
        StageTwoData::SecondCohort => {
            let cohort2 = &subjects[n1..];
            let target = spec.d2_planned + decision.extra_events();
            let t_final = kth_event_time(cohort2, selected, target, times).map_or(t1, |t| t.max(t1));
            let z2_s = logrank_or_flat(cohort2, Population::Subgroup, t_final, obs)?;
            let z2_f = match selected {
                Population::Full => Some(logrank_or_flat(cohort2, Population::Full, t_final, obs)?),
                Population::Subgroup => None,
            };
            let inc = StageIncrements { z1_s: s1_s.z, z1_f: s1_f.z, z2_s: z2_s.z, z2_f: z2_f.map(|l| l.z) };
            let analysed = spec.d1_total + z2_f.map_or(z2_s.events, |l| l.events);
            (inc, s1_s.events + z2_s.events, z2_f.map(|l| s1_f.events + l.events), t_final, analysed)
        }
        StageTwoData::Cumulative => {
            let target = spec.d_total_planned() + decision.extra_events();
            let t_final = kth_event_time(subjects, selected, target, times).map_or(t1, |t| t.max(t1));
            let fin_s = logrank_or_flat(subjects, Population::Subgroup, t_final, obs)?;
            let fin_f = match selected {
                Population::Full => Some(logrank_or_flat(subjects, Population::Full, t_final, obs)?),
                Population::Subgroup => None,
            };
            let incr = |fin: &LogRank, s1: &LogRank| {
                increment_statistic(fin.z, s1.z, f64::from(s1.events), f64::from(fin.events)).unwrap_or(0.0)
            };
            let inc = StageIncrements {
                z1_s: s1_s.z,
                z1_f: s1_f.z,
                z2_s: incr(&fin_s, &s1_s),
                z2_f: fin_f.as_ref().map(|f| incr(f, &s1_f)),
            };
            let analysed = fin_f.map_or(fin_s.events, |l| l.events);
            (inc, fin_s.events, fin_f.map(|l| l.events), t_final, analysed)
        }
    };
    let test = closed_test_increments(&inc, &decision, &planned, spec.alpha)?;
    let stages = StageSummary {
        increments: inc,
        d1_s: s1_s.events,
        d1_f: s1_f.events,
        d2_s,
        d2_f,
    };
    Ok(ReplicationOutcome { interim, decision, test, stages: Some(stages), duration: t_final, total_events })
}

/// Stage statistics behind the final test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub increments: StageIncrements,
    /// Stage-one events.
    pub d1_s: u32,
    pub d1_f: u32,
    /// Events over both stages.
    pub d2_s: u32,
    pub d2_f: Option<u32>,
}

impl StageSummary {
    /// Pooled statistics `(Z1_S, Z1_F, Z2_S, Z2_F)` combining both stages
    /// with event-count weights.
    pub fn pooled(&self) -> [Option<f64>; 4] {
        let pool = |z1: f64, z2: f64, d1: u32, d2: u32| {
            let (d1, d2) = (f64::from(d1), f64::from(d2));
            (d2 > d1 && d1 > 0.0).then(|| (z1 * d1.sqrt() + z2 * (d2 - d1).sqrt()) / d2.sqrt())
        };
        let i = &self.increments;
        [
            Some(i.z1_s),
            Some(i.z1_f),
            pool(i.z1_s, i.z2_s, self.d1_s, self.d2_s),
            match (i.z2_f, self.d2_f) {
                (Some(z), Some(d)) => pool(i.z1_f, z, self.d1_f, d),
                _ => None,
            },
        ]
    }
}
