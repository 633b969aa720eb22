//! Interim decision rule: zone classification, event re-estimation and
//! population selection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{CpCurve, InfoFraction, McpWeight, Population, StageCounts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Favorable,
    Promising,
    Enrichment,
    Unfavorable,
    Futility,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::Favorable, Zone::Promising, Zone::Enrichment, Zone::Unfavorable, Zone::Futility];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Zone::Favorable => "favorable",
            Zone::Promising => "promising",
            Zone::Enrichment => "enrichment",
            Zone::Unfavorable => "unfavorable",
            Zone::Futility => "futility",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Conditional-power cutoffs for the five interim zones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneThresholds {
    /// `1 - β`: at or above this, the full population is favourable.
    pub favorable: f64,
    /// `δ^(F)`: lower edge of the promising zone.
    pub promising_full: f64,
    /// `δ^(S)`: subgroup threshold for enrichment.
    pub enrichment_subgroup: f64,
    pub futility_full: f64,
    pub futility_subgroup: f64,
}

impl ZoneThresholds {
    /// 0.9 / 0.4 / 0.5 with a 0.05 futility bar in both populations.
    pub const ONCOLOGY: ZoneThresholds = ZoneThresholds {
        favorable: 0.9,
        promising_full: 0.4,
        enrichment_subgroup: 0.5,
        futility_full: 0.05,
        futility_subgroup: 0.05,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.futility_full
            && self.futility_full <= self.promising_full
            && self.promising_full <= self.favorable
            && self.favorable <= 1.0
            && 0.0 <= self.futility_subgroup
            && self.futility_subgroup <= self.enrichment_subgroup
            && self.enrichment_subgroup <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("zone thresholds out of order: {self:?}")))
        }
    }

    /// The same cutoffs with the futility zone switched off.
    pub fn without_futility(mut self) -> Self {
        self.futility_full = 0.0;
        self.futility_subgroup = 0.0;
        self
    }
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self::ONCOLOGY
    }
}

/// Lower edges are inclusive; futility is carved out of the unfavourable
/// region.
pub fn classify_zone(cp_full: f64, cp_subgroup: f64, th: &ZoneThresholds) -> Zone {
    if cp_full >= th.favorable {
        Zone::Favorable
    } else if cp_full >= th.promising_full {
        Zone::Promising
    } else if cp_subgroup >= th.enrichment_subgroup {
        Zone::Enrichment
    } else if cp_full < th.futility_full && cp_subgroup < th.futility_subgroup {
        Zone::Futility
    } else {
        Zone::Unfavorable
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsrFlag {
    /// The target power is unreachable within the cap.
    CapBinding,
    /// The power curve at the cap was below its value at the planned size.
    NonMonotone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsrOutcome {
    pub events: u32,
    pub flag: Option<SsrFlag>,
}

/// Smallest integer increment in `[planned, cap]` whose conditional power
/// reaches `target`, or `cap` when none does.
///
/// `cp` must be nondecreasing on the range. The crossing is bracketed by
/// bisection on the reals and then settled on the integer grid.
pub fn reestimate_events<F>(cp: F, planned: u32, cap: u32, target: f64) -> Result<SsrOutcome>
where
    F: Fn(f64) -> f64,
{
    if planned < 1 || cap < planned {
        return Err(Error::domain(format!("need 1 <= planned ({planned}) <= cap ({cap})")));
    }
    let at = |e: u32| cp(f64::from(e));
    let cp_planned = at(planned);
    if cp_planned >= target {
        return Ok(SsrOutcome { events: planned, flag: None });
    }
    let cp_cap = at(cap);
    if cp_cap < target {
        let flag = if cp_cap < cp_planned { SsrFlag::NonMonotone } else { SsrFlag::CapBinding };
        return Ok(SsrOutcome { events: cap, flag: Some(flag) });
    }
    let (mut lo, mut hi) = (f64::from(planned), f64::from(cap));
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if cp(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut e = (hi.ceil() as u32).clamp(planned, cap);
    while e > planned && at(e - 1) >= target {
        e -= 1;
    }
    while e < cap && at(e) < target {
        e += 1;
    }
    Ok(SsrOutcome { events: e, flag: None })
}

/// Interim information for one population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationInterim {
    /// Oriented interim statistic.
    pub z1: f64,
    /// `n1` = events behind `z1`; `n2` = planned total if no adaptation.
    pub counts: StageCounts,
    /// Largest total the re-estimation may reach.
    pub cap_total: f64,
    /// Oriented surrogate-predicted statistic, when one is available.
    pub predicted: Option<f64>,
}

impl PopulationInterim {
    pub fn planned_incr(&self) -> u32 {
        self.counts.n2_incr().round() as u32
    }

    pub fn cap_incr(&self) -> u32 {
        let cap = (self.cap_total - self.counts.n1()).round().max(0.0) as u32;
        cap.max(self.planned_incr())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimSnapshot {
    pub full: PopulationInterim,
    pub subgroup: PopulationInterim,
    pub info: InfoFraction,
}

impl InterimSnapshot {
    pub fn population(&self, p: Population) -> &PopulationInterim {
        match p {
            Population::Full => &self.full,
            Population::Subgroup => &self.subgroup,
        }
    }
}

/// The pre-specified parts of the design that drive the interim decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    /// One-sided level of the final test.
    pub alpha: f64,
    /// Conditional power the re-estimation aims for (`1 - β`).
    pub target_power: f64,
    pub thresholds: ZoneThresholds,
    /// `None` uses plain conditional power.
    pub variant: Option<McpWeight>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimDecision {
    pub zone: Zone,
    pub selected: Option<Population>,
    /// Second-stage increment, on the selected population's own scale.
    pub n2_incr_final: u32,
    /// Planned second-stage increment of the selected population.
    pub n2_incr_planned: u32,
    pub cp_full: f64,
    pub cp_subgroup: f64,
    /// Harmonic blend replaced by the linear one, per population.
    pub fallback_full: bool,
    pub fallback_subgroup: bool,
    pub ssr_flag: Option<SsrFlag>,
}

impl InterimDecision {
    /// Events added on top of the planned increment.
    pub fn extra_events(&self) -> u32 {
        self.n2_incr_final.saturating_sub(self.n2_incr_planned)
    }
}

fn curve(p: &PopulationInterim, info: &InfoFraction, rule: &DecisionRule) -> Result<CpCurve> {
    match (rule.variant, p.predicted) {
        (None, _) => CpCurve::observed(p.z1, &p.counts, rule.alpha),
        (Some(v), Some(f)) => CpCurve::modified(v, p.z1, f, info, &p.counts, rule.alpha),
        (Some(v), None) => Err(Error::Contract(format!("weight {v} needs a predicted statistic"))),
    }
}

/// Computes the (modified) conditional powers, classifies the zone and
/// re-estimates the second-stage events for promising and enrichment
/// outcomes.
pub fn decide(snapshot: &InterimSnapshot, rule: &DecisionRule) -> Result<InterimDecision> {
    rule.thresholds.validate()?;
    let full = curve(&snapshot.full, &snapshot.info, rule)?;
    let sub = curve(&snapshot.subgroup, &snapshot.info, rule)?;
    let cp_full = full.at(snapshot.full.counts.n2_incr());
    let cp_subgroup = sub.at(snapshot.subgroup.counts.n2_incr());
    let zone = classify_zone(cp_full, cp_subgroup, &rule.thresholds);

    let mut decision = InterimDecision {
        zone,
        selected: Some(Population::Full),
        n2_incr_final: snapshot.full.planned_incr(),
        n2_incr_planned: snapshot.full.planned_incr(),
        cp_full,
        cp_subgroup,
        fallback_full: full.fell_back,
        fallback_subgroup: sub.fell_back,
        ssr_flag: None,
    };
    let (pop, c) = match zone {
        Zone::Favorable | Zone::Unfavorable => return Ok(decision),
        Zone::Futility => {
            decision.selected = None;
            decision.n2_incr_final = 0;
            decision.n2_incr_planned = 0;
            return Ok(decision);
        }
        Zone::Promising => (&snapshot.full, full),
        Zone::Enrichment => (&snapshot.subgroup, sub),
    };
    let ssr = reestimate_events(|e| c.at(e), pop.planned_incr(), pop.cap_incr(), rule.target_power)?;
    decision.selected = Some(if zone == Zone::Enrichment { Population::Subgroup } else { Population::Full });
    decision.n2_incr_final = ssr.events;
    decision.n2_incr_planned = pop.planned_incr();
    decision.ssr_flag = ssr.flag;
    Ok(decision)
}
