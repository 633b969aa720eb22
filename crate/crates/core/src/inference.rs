//! Final analysis: log-rank statistics, stagewise increments, the weighted
//! inverse-normal (CHW) combination and the closed test over the selected
//! population and the intersection hypothesis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decision::{InterimDecision, Zone};
use crate::error::{Error, Result};
use crate::power::{Population, StageCounts};
use crate::stats::{norm_quantile, phi};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub arm: Arm,
    pub in_subgroup: bool,
    /// Calendar month of enrolment.
    pub enroll: f64,
    /// Months from enrolment to the event.
    pub event_time: f64,
}

impl Subject {
    pub fn in_population(&self, p: Population) -> bool {
        p == Population::Full || self.in_subgroup
    }

    /// Calendar month of the event.
    pub fn event_calendar(&self) -> f64 {
        self.enroll + self.event_time
    }
}

/// Patient-level survival data, immutable once built.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurvivalSample {
    subjects: Vec<Subject>,
}

#[derive(Debug, Deserialize)]
struct SubjectRow {
    arm: String,
    subgroup: String,
    enroll_month: f64,
    event_month: f64,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "s" => Some(true),
        "0" | "false" | "no" | "sc" => Some(false),
        _ => None,
    }
}

fn parse_arm(s: &str) -> Option<Arm> {
    match s.trim().to_ascii_lowercase().as_str() {
        "treatment" | "trt" | "t" | "1" => Some(Arm::Treatment),
        "control" | "ctrl" | "c" | "0" => Some(Arm::Control),
        _ => None,
    }
}

impl SurvivalSample {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        for (i, s) in subjects.iter().enumerate() {
            if !(s.enroll.is_finite() && s.enroll >= 0.0 && s.event_time.is_finite() && s.event_time >= 0.0) {
                return Err(Error::domain(format!("subject {i}: enrolment and event times must be finite and >= 0")));
            }
        }
        Ok(Self { subjects })
    }

    /// Reads `arm,subgroup,enroll_month,event_month` rows (with header).
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut subjects = Vec::new();
        for (i, row) in rdr.deserialize::<SubjectRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Config(format!("line {line}: {e}")))?;
            let arm = parse_arm(&row.arm)
                .ok_or_else(|| Error::Config(format!("line {line}: field `arm`: unknown arm `{}`", row.arm)))?;
            let in_subgroup = parse_flag(&row.subgroup).ok_or_else(|| {
                Error::Config(format!("line {line}: field `subgroup`: expected 0/1, got `{}`", row.subgroup))
            })?;
            subjects.push(Subject { arm, in_subgroup, enroll: row.enroll_month, event_time: row.event_month });
        }
        Self::new(subjects)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn logrank(&self, population: Population, cut: f64) -> Result<LogRank> {
        logrank_statistic(&self.subjects, population, cut)
    }
}

/// Log-rank summary at an analysis cut.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    /// Oriented statistic: positive favours treatment.
    pub z: f64,
    pub events: u32,
    /// Observed minus expected treatment-arm events.
    pub o_minus_e: f64,
    pub variance: f64,
}

impl LogRank {
    /// The statistic in the usual log-rank sign (negative favours treatment).
    pub fn z_logrank(&self) -> f64 {
        -self.z
    }
}

/// Two-sample log-rank test over subjects in `population` enrolled before
/// `cut`, with administrative censoring at the cut.
///
/// Tied event times use the Breslow (binomial) variance term. The returned
/// statistic is oriented so that positive values favour treatment.
pub fn logrank_statistic(subjects: &[Subject], population: Population, cut: f64) -> Result<LogRank> {
    let mut obs: Vec<(f64, bool, bool)> = subjects
        .iter()
        .filter(|s| s.in_population(population) && s.enroll < cut)
        .map(|s| {
            let window = cut - s.enroll;
            let event = s.enroll + s.event_time <= cut;
            (if event { s.event_time } else { window }, event, s.arm == Arm::Treatment)
        })
        .collect();
    logrank_from_observations(&mut obs, population)
}

// (time, event, treated); sorted in place.
pub(crate) fn logrank_from_observations(obs: &mut [(f64, bool, bool)], population: Population) -> Result<LogRank> {
    obs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk = obs.len() as f64;
    let mut at_risk_trt = obs.iter().filter(|o| o.2).count() as f64;
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    let mut events = 0u32;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let (mut d, mut d_trt, mut leaving, mut leaving_trt) = (0.0, 0.0, 0.0, 0.0);
        while i < obs.len() && obs[i].0 == t {
            let (_, ev, trt) = obs[i];
            if ev {
                d += 1.0;
                if trt {
                    d_trt += 1.0;
                }
            }
            leaving += 1.0;
            if trt {
                leaving_trt += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            let p = at_risk_trt / at_risk;
            o_minus_e += d_trt - d * p;
            var += d * p * (1.0 - p);
            events += d as u32;
        }
        at_risk -= leaving;
        at_risk_trt -= leaving_trt;
    }
    if events == 0 {
        return Err(Error::UndefinedStatistic(population.label()));
    }
    let z = if var > 0.0 { -o_minus_e / var.sqrt() } else { 0.0 };
    Ok(LogRank { z, events, o_minus_e, variance: var })
}

/// Second-stage increment `(z_cum·√d2 − z1·√d1)/√(d2 − d1)` of a cumulative
/// statistic under independent increments.
pub fn increment_statistic(z_cum: f64, z1: f64, d1: f64, d2: f64) -> Result<f64> {
    if !(d1 >= 1.0 && d2 > d1) {
        return Err(Error::domain(format!("increment needs d2 > d1 >= 1, got d1={d1}, d2={d2}")));
    }
    Ok((z_cum * d2.sqrt() - z1 * d1.sqrt()) / (d2 - d1).sqrt())
}

/// Combination weights fixed by the planned stage sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChwWeights {
    pub w1: f64,
    pub w2: f64,
}

impl ChwWeights {
    pub fn from_planned(planned: &StageCounts) -> Self {
        Self { w1: planned.fraction().sqrt(), w2: (planned.n2_incr() / planned.n2()).sqrt() }
    }
}

pub fn chw_combine(z1: f64, z2_incr: f64, planned: &StageCounts) -> f64 {
    let w = ChwWeights::from_planned(planned);
    w.w1 * z1 + w.w2 * z2_incr
}

const P_CLAMP: f64 = 1e-16;

/// Equal-weight Hochberg statistic for the intersection of two one-sided
/// hypotheses, returned on the oriented z scale.
pub fn hochberg_intersection(z_full: f64, z_sub: f64) -> f64 {
    let p_f = phi(-z_full);
    let p_s = phi(-z_sub);
    let p = (2.0 * p_f.min(p_s)).min(p_f.max(p_s)).clamp(P_CLAMP, 1.0 - P_CLAMP);
    // Φ⁻¹(1 − p) computed as −Φ⁻¹(p) to keep the small-p tail exact.
    -norm_quantile(p).expect("p clamped into (0, 1)")
}

/// Stagewise oriented statistics. Stage-2 values are cumulative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatistics {
    pub z1_s: f64,
    pub z1_f: f64,
    pub z2_s: f64,
    /// Absent after enrichment.
    pub z2_f: Option<f64>,
    pub d1_s: f64,
    pub d1_f: f64,
    pub d2_s: f64,
    pub d2_f: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedTestResult {
    pub tested: Option<Population>,
    pub z_chw_elementary: Option<f64>,
    pub z_chw_intersection: Option<f64>,
    pub reject_elementary: bool,
    pub reject_intersection: bool,
    pub reject_overall: bool,
}

impl ClosedTestResult {
    pub fn none() -> Self {
        Self {
            tested: None,
            z_chw_elementary: None,
            z_chw_intersection: None,
            reject_elementary: false,
            reject_intersection: false,
            reject_overall: false,
        }
    }
}

/// Closed test in the population selected at interim.
///
/// The elementary hypothesis of the selected population and the
/// intersection hypothesis are both tested with CHW statistics built from
/// planned weights. After enrichment the stage-2 intersection component is
/// the subgroup increment.
pub fn closed_test(
    stats: &StageStatistics,
    decision: &InterimDecision,
    planned: &StageCounts,
    alpha: f64,
) -> Result<ClosedTestResult> {
    if decision.selected.is_none() {
        return closed_test_increments(&StageIncrements::default(), decision, planned, alpha);
    }
    if stats.z2_f.is_some() != stats.d2_f.is_some() {
        return Err(Error::Contract("full-population stage-2 statistic and event count must come together".into()));
    }
    let z2_s = increment_statistic(stats.z2_s, stats.z1_s, stats.d1_s, stats.d2_s)?;
    let z2_f = match (stats.z2_f, stats.d2_f) {
        (Some(z), Some(d)) => Some(increment_statistic(z, stats.z1_f, stats.d1_f, d)?),
        _ => None,
    };
    let inc = StageIncrements { z1_s: stats.z1_s, z1_f: stats.z1_f, z2_s, z2_f };
    closed_test_increments(&inc, decision, planned, alpha)
}

/// Stage-one statistics and independent stage-two statistics, all oriented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageIncrements {
    pub z1_s: f64,
    pub z1_f: f64,
    pub z2_s: f64,
    /// Absent after enrichment.
    pub z2_f: Option<f64>,
}

/// [`closed_test`] on statistics whose second stage is already independent
/// of the first, such as a second cohort analysed on its own.
pub fn closed_test_increments(
    inc: &StageIncrements,
    decision: &InterimDecision,
    planned: &StageCounts,
    alpha: f64,
) -> Result<ClosedTestResult> {
    let Some(selected) = decision.selected else {
        if decision.zone != Zone::Futility {
            return Err(Error::Contract("no population selected outside the futility zone".into()));
        }
        return Ok(ClosedTestResult::none());
    };
    if (selected == Population::Subgroup) != inc.z2_f.is_none() {
        return Err(Error::Contract("full-population stage-2 statistic must be present iff the full population continues".into()));
    }
    let z1_fs = hochberg_intersection(inc.z1_f, inc.z1_s);
    let (z1_el, z2_el, z2_fs) = match inc.z2_f {
        Some(z2_f) => (inc.z1_f, z2_f, hochberg_intersection(z2_f, inc.z2_s)),
        None => (inc.z1_s, inc.z2_s, inc.z2_s),
    };
    let crit = norm_quantile(1.0 - alpha)?;
    let z_el = chw_combine(z1_el, z2_el, planned);
    let z_fs = chw_combine(z1_fs, z2_fs, planned);
    let reject_elementary = z_el > crit;
    let reject_intersection = z_fs > crit;
    Ok(ClosedTestResult {
        tested: Some(selected),
        z_chw_elementary: Some(z_el),
        z_chw_intersection: Some(z_fs),
        reject_elementary,
        reject_intersection,
        reject_overall: reject_elementary && reject_intersection,
    })
}
