//! Conditional power, surrogate-modified conditional power and event sizing.
//!
//! All statistics here are *oriented*: larger values mean a better treatment
//! effect. A raw log-rank statistic (negative when the treatment arm has
//! fewer events than expected) is negated before it reaches this module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{norm_quantile, phi};

/// Sign convention a statistic is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Larger is better.
    #[default]
    Oriented,
    /// Log-rank sign: negative favours treatment.
    LogRank,
}

impl Convention {
    /// Converts a value in this convention to the oriented convention.
    pub fn to_oriented(self, value: f64) -> f64 {
        match self {
            Convention::Oriented => value,
            Convention::LogRank => -value,
        }
    }

    pub fn from_oriented(self, value: f64) -> f64 {
        // The map is an involution.
        self.to_oriented(value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Full,
    Subgroup,
}

impl Population {
    pub fn label(self) -> &'static str {
        match self {
            Population::Full => "F",
            Population::Subgroup => "S",
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Linear map from an observed surrogate effect to a predicted primary
/// test statistic, `a + b·θ̂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoricalModel {
    pub intercept: f64,
    pub slope: f64,
    /// Convention the model's output is expressed in.
    #[serde(default)]
    pub convention: Convention,
}

impl HistoricalModel {
    pub fn new(intercept: f64, slope: f64, convention: Convention) -> Result<Self> {
        if !intercept.is_finite() || !slope.is_finite() {
            return Err(Error::domain("historical model coefficients must be finite"));
        }
        Ok(Self { intercept, slope, convention })
    }

    /// The model output in its own convention.
    pub fn predict_raw(&self, theta_hat: f64) -> f64 {
        self.intercept + self.slope * theta_hat
    }
}

impl Default for HistoricalModel {
    fn default() -> Self {
        Self { intercept: 0.0, slope: 0.0, convention: Convention::Oriented }
    }
}

/// Observed treatment effect on the surrogate endpoint in one population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReadout {
    pub theta_hat: f64,
    pub population: Population,
}

impl SurrogateReadout {
    /// A binary-surrogate readout; the risk difference must lie in [-1, 1].
    pub fn risk_difference(theta_hat: f64, population: Population) -> Result<Self> {
        if !(-1.0..=1.0).contains(&theta_hat) {
            return Err(Error::domain(format!("risk difference must lie in [-1, 1], got {theta_hat}")));
        }
        Ok(Self { theta_hat, population })
    }

    /// A readout on an unbounded scale, e.g. a log titre ratio.
    pub fn effect(theta_hat: f64, population: Population) -> Result<Self> {
        if !theta_hat.is_finite() {
            return Err(Error::domain("surrogate effect must be finite"));
        }
        Ok(Self { theta_hat, population })
    }
}

/// Oriented predicted statistic `f(θ̂)`.
pub fn predict_statistic(model: &HistoricalModel, surrogate: &SurrogateReadout) -> f64 {
    model.convention.to_oriented(model.predict_raw(surrogate.theta_hat))
}

/// Planned information (events) for a two-stage analysis.
///
/// `n1` is the information behind the interim statistic and `n2` the planned
/// cumulative total; the planned increment is `n2 - n1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    n1: f64,
    n2: f64,
}

impl StageCounts {
    pub fn new(n1: f64, n2: f64) -> Result<Self> {
        if !(n1 > 0.0 && n2 > n1 && n2.is_finite()) {
            return Err(Error::domain(format!("stage counts need 0 < n1 < n2, got n1={n1}, n2={n2}")));
        }
        Ok(Self { n1, n2 })
    }

    pub fn n1(&self) -> f64 {
        self.n1
    }

    pub fn n2(&self) -> f64 {
        self.n2
    }

    pub fn n2_incr(&self) -> f64 {
        self.n2 - self.n1
    }

    pub fn fraction(&self) -> f64 {
        self.n1 / self.n2
    }
}

/// Interim information fraction `t` and, for the control-CDF weighting, the
/// control survival CDF value `F_c(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoFraction {
    t: f64,
    fc_t: Option<f64>,
}

impl InfoFraction {
    pub fn new(t: f64, fc_t: Option<f64>) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::domain(format!("information fraction must lie in (0, 1], got {t}")));
        }
        if let Some(fc) = fc_t {
            if !(0.0..=1.0).contains(&fc) {
                return Err(Error::domain(format!("F_c(t) must lie in [0, 1], got {fc}")));
            }
        }
        Ok(Self { t, fc_t })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn fc_t(&self) -> Option<f64> {
        self.fc_t
    }
}

/// How the observed interim statistic and the surrogate prediction are
/// blended into the drift of the conditional power.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McpWeight {
    /// `z1·t + f·(1-t)`
    #[serde(rename = "w1")]
    Linear,
    /// `z1·f / (z1·(1-t) + f·t)`
    #[serde(rename = "w2")]
    Harmonic,
    /// `z1·f / (z1·(1-F_c) + f·F_c)`
    #[serde(rename = "w3")]
    ControlCdfHarmonic,
}

impl McpWeight {
    pub const ALL: [McpWeight; 3] = [McpWeight::Linear, McpWeight::Harmonic, McpWeight::ControlCdfHarmonic];

    pub fn label(self) -> &'static str {
        match self {
            McpWeight::Linear => "w1",
            McpWeight::Harmonic => "w2",
            McpWeight::ControlCdfHarmonic => "w3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w1" | "1" | "linear" => Some(McpWeight::Linear),
            "w2" | "2" | "harmonic" => Some(McpWeight::Harmonic),
            "w3" | "3" | "control_cdf" => Some(McpWeight::ControlCdfHarmonic),
            _ => None,
        }
    }
}

impl fmt::Display for McpWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::domain(format!("one-sided alpha must lie in (0, 0.5), got {alpha}")));
    }
    Ok(())
}

fn check_increment(n2_incr: f64) -> Result<()> {
    if !(n2_incr > 0.0 && n2_incr.is_finite()) {
        return Err(Error::domain(format!("second-stage increment must be > 0, got {n2_incr}")));
    }
    Ok(())
}

// 1 - Φ(A - drift·√(ñ₂/n₁)) with A = (z_{1-α}√(n₁+ñ₂) - z1√n₁)/√ñ₂.
fn cp_kernel(z1: f64, drift: f64, n1: f64, n2_incr: f64, crit: f64) -> f64 {
    let n2 = n1 + n2_incr;
    let arg = (crit * n2.sqrt() - z1 * n1.sqrt()) / n2_incr.sqrt() - drift * (n2_incr / n1).sqrt();
    phi(-arg)
}

/// Conditional probability that the final cumulative statistic exceeds
/// `z_{1-α}`, given the interim statistic `z1` on `counts.n1()` events and
/// `n2_incr` further events, with the drift estimated from `z1` itself.
///
/// Strictly increasing in `z1`. For `0 < z1 <= z_{1-α}`, or for any `z1 > 0`
/// once `n2_incr >= n1`, it is also strictly increasing in `n2_incr`.
pub fn conditional_power(z1: f64, counts: &StageCounts, alpha: f64, n2_incr: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_increment(n2_incr)?;
    let crit = norm_quantile(1.0 - alpha)?;
    Ok(cp_kernel(z1, z1, counts.n1, n2_incr, crit))
}

/// Drift term `g` replacing `z1` in the conditional power.
pub fn blended_drift(variant: McpWeight, z1: f64, predicted: f64, info: &InfoFraction) -> Result<f64> {
    let harmonic = |w: f64| -> Result<f64> {
        let denom = z1 * (1.0 - w) + predicted * w;
        if z1 * predicted <= 0.0 || denom.abs() < 1e-9 {
            return Err(Error::DegenerateWeight { observed: z1, predicted });
        }
        Ok(z1 * predicted / denom)
    };
    match variant {
        McpWeight::Linear => Ok(z1 * info.t + predicted * (1.0 - info.t)),
        McpWeight::Harmonic => harmonic(info.t),
        McpWeight::ControlCdfHarmonic => {
            let fc = info
                .fc_t
                .ok_or_else(|| Error::Contract("control-CDF weighting needs F_c(t)".into()))?;
            harmonic(fc)
        }
    }
}

/// Surrogate-modified conditional power.
///
/// Identical to [`conditional_power`] except that the drift is the blend of
/// the observed and predicted statistics chosen by `variant`. The harmonic
/// blends fail with [`Error::DegenerateWeight`] when `z1` and `predicted`
/// are not both non-zero with a common sign.
pub fn modified_cp(
    variant: McpWeight,
    z1: f64,
    predicted: f64,
    info: &InfoFraction,
    counts: &StageCounts,
    alpha: f64,
    n2_incr: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_increment(n2_incr)?;
    let drift = blended_drift(variant, z1, predicted, info)?;
    let crit = norm_quantile(1.0 - alpha)?;
    Ok(cp_kernel(z1, drift, counts.n1, n2_incr, crit))
}

/// A conditional power curve over the second-stage increment with the drift
/// fixed at interim. `fell_back` records a harmonic blend that was replaced
/// by the linear one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpCurve {
    z1: f64,
    drift: f64,
    n1: f64,
    crit: f64,
    pub fell_back: bool,
}

impl CpCurve {
    /// Plain conditional power curve.
    pub fn observed(z1: f64, counts: &StageCounts, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { z1, drift: z1, n1: counts.n1, crit: norm_quantile(1.0 - alpha)?, fell_back: false })
    }

    /// Modified curve; a degenerate harmonic blend falls back to the linear one.
    pub fn modified(
        variant: McpWeight,
        z1: f64,
        predicted: f64,
        info: &InfoFraction,
        counts: &StageCounts,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let (drift, fell_back) = match blended_drift(variant, z1, predicted, info) {
            Ok(d) => (d, false),
            Err(Error::DegenerateWeight { .. }) => (blended_drift(McpWeight::Linear, z1, predicted, info)?, true),
            Err(e) => return Err(e),
        };
        Ok(Self { z1, drift, n1: counts.n1, crit: norm_quantile(1.0 - alpha)?, fell_back })
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn at(&self, n2_incr: f64) -> f64 {
        cp_kernel(self.z1, self.drift, self.n1, n2_incr, self.crit)
    }
}

/// Schoenfeld event count for a one-sided log-rank test of `hr_alt` against
/// the null hazard ratio `hr_margin` (1 for superiority), rounded up.
/// `allocation` is the treatment:control ratio.
pub fn required_events(hr_alt: f64, alpha: f64, power: f64, allocation: f64, hr_margin: f64) -> Result<u64> {
    check_alpha(alpha)?;
    if !(power > 0.5 && power < 1.0) {
        return Err(Error::domain(format!("power must lie in (0.5, 1), got {power}")));
    }
    if !(allocation > 0.0 && allocation.is_finite()) {
        return Err(Error::domain(format!("allocation ratio must be > 0, got {allocation}")));
    }
    if !(hr_alt > 0.0 && hr_margin <= 1.0 && hr_margin > 0.0) {
        return Err(Error::domain("hazard ratios must satisfy 0 < hr_alt and 0 < hr_margin <= 1"));
    }
    if hr_alt >= hr_margin {
        return Err(Error::domain(format!(
            "alternative hazard ratio {hr_alt} must be below the margin {hr_margin}"
        )));
    }
    let z = norm_quantile(1.0 - alpha)? + norm_quantile(power)?;
    let log_ratio = (hr_alt / hr_margin).ln();
    let r = allocation;
    let d = (1.0 + r).powi(2) / r * z * z / (log_ratio * log_ratio);
    // Guard against 161.0000000001-style rounding noise.
    Ok((d - 1e-9).ceil() as u64)
}

/// Vaccine efficacy in percent, `100·(1 - hr)`.
pub fn ve_from_hr(hr: f64) -> Result<f64> {
    if !(hr > 0.0) {
        return Err(Error::domain(format!("hazard ratio must be > 0, got {hr}")));
    }
    Ok(100.0 * (1.0 - hr))
}

pub fn hr_from_ve(ve_percent: f64) -> Result<f64> {
    if !(ve_percent < 100.0) {
        return Err(Error::domain(format!("vaccine efficacy must be < 100%, got {ve_percent}")));
    }
    Ok(1.0 - ve_percent / 100.0)
}

/// Case counts for a vaccine trial where, conditional on the total number
/// of cases `N`, the vaccine-arm count is Binomial(N, r·hr / (1 + r·hr)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaseSplitSizing {
    /// Normal approximation to the conditional binomial test.
    pub normal_approx: u64,
    /// Smallest N whose exact binomial test reaches the target power.
    pub exact_first: u64,
    /// Smallest N from which every larger N also reaches the target power.
    pub exact_stable: u64,
}

pub fn vaccine_case_split(
    hr_alt: f64,
    hr_margin: f64,
    alpha_one_sided: f64,
    power: f64,
    allocation: f64,
) -> Result<CaseSplitSizing> {
    check_alpha(alpha_one_sided)?;
    if !(hr_alt > 0.0 && hr_alt < hr_margin) {
        return Err(Error::domain("need 0 < hr_alt < hr_margin"));
    }
    let p0 = allocation * hr_margin / (1.0 + allocation * hr_margin);
    let p1 = allocation * hr_alt / (1.0 + allocation * hr_alt);
    let za = norm_quantile(1.0 - alpha_one_sided)?;
    let zb = norm_quantile(power)?;
    let n = ((za * (p0 * (1.0 - p0)).sqrt() + zb * (p1 * (1.0 - p1)).sqrt()) / (p0 - p1)).powi(2);
    let normal_approx = n.ceil() as u64;

    // Exact test rejects for small vaccine-arm counts.
    let exact_power = |n: u64| -> f64 {
        let mut cdf0 = 0.0;
        let mut cdf1 = 0.0;
        for k in 0..=n {
            let next0 = cdf0 + binom_pmf(n, k, p0);
            if next0 > alpha_one_sided {
                break;
            }
            cdf0 = next0;
            cdf1 += binom_pmf(n, k, p1);
        }
        cdf1
    };
    let upper = 4 * normal_approx + 50;
    let powers: Vec<f64> = (0..=upper).map(exact_power).collect();
    let exact_first = (1..=upper).find(|&n| powers[n as usize] >= power).unwrap_or(upper);
    let mut exact_stable = upper;
    for n in (1..=upper).rev() {
        if powers[n as usize] >= power {
            exact_stable = n;
        } else {
            break;
        }
    }
    Ok(CaseSplitSizing { normal_approx, exact_first, exact_stable })
}

fn binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    let log_choose = libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0);
    (log_choose + k * p.ln() + (n - k) * (1.0 - p).ln()).exp()
}

/// Per-stage, per-arm sample sizes (or events) and outcome variances used to
/// build the joint covariance of the four stagewise statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceInputs {
    /// Cumulative full-population size per stage in the control arm.
    pub n_control: [f64; 2],
    /// Cumulative full-population size per stage in the treatment arm.
    pub n_treatment: [f64; 2],
    /// Outcome variance in the full population, `[control, treatment]`.
    pub var_full: [f64; 2],
    /// Outcome variance in the subgroup, `[control, treatment]`.
    pub var_subgroup: [f64; 2],
    /// Subgroup prevalence.
    pub tau: f64,
}

/// Index order of [`theoretical_stage_covariance`]'s output.
pub const COV_ORDER: [&str; 4] = ["Z1_S", "Z1_F", "Z2_S", "Z2_F"];

/// Covariance (= correlation, since every statistic has unit variance) of
/// `(Z1_S, Z1_F, Z2_S, Z2_F)` under independent increments.
pub fn theoretical_stage_covariance(inp: &CovarianceInputs) -> Result<[[f64; 4]; 4]> {
    if !(inp.tau > 0.0 && inp.tau <= 1.0) {
        return Err(Error::domain(format!("subgroup prevalence must lie in (0, 1], got {}", inp.tau)));
    }
    let positive = inp
        .n_control
        .iter()
        .chain(&inp.n_treatment)
        .chain(&inp.var_full)
        .chain(&inp.var_subgroup)
        .all(|v| *v > 0.0 && v.is_finite());
    if !positive {
        return Err(Error::domain("counts and variances must be positive and finite"));
    }
    for n in [inp.n_control, inp.n_treatment] {
        if n[1] < n[0] {
            return Err(Error::domain("cumulative counts must not decrease across stages"));
        }
    }
    // (population, stage) for each index; true = subgroup.
    let slots = [(true, 0usize), (false, 0), (true, 1), (false, 1)];
    // Covariance of the two mean differences; stage sizes enter through the
    // later of the two stages.
    let raw_cov = |a: (bool, usize), b: (bool, usize)| -> f64 {
        let j = a.1.max(b.1);
        let (v, scale) = if a.0 && b.0 { (inp.var_subgroup, inp.tau) } else { (inp.var_full, 1.0) };
        v[0] / (scale * inp.n_control[j]) + v[1] / (scale * inp.n_treatment[j])
    };
    let mut out = [[0.0; 4]; 4];
    for (i, &a) in slots.iter().enumerate() {
        for (k, &b) in slots.iter().enumerate() {
            let sd = (raw_cov(a, a) * raw_cov(b, b)).sqrt();
            out[i][k] = if i == k { 1.0 } else { raw_cov(a, b) / sd };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RngStream;

    const ALPHA: f64 = 0.025;

    fn counts(n1: f64, n2: f64) -> StageCounts {
        StageCounts::new(n1, n2).unwrap()
    }

    #[test]
    fn cp_extremes() {
        for (n1, n2) in [(60.0, 160.0), (10.0, 20.0), (40.0, 300.0)] {
            let c = counts(n1, n2);
            assert!(conditional_power(10.0, &c, ALPHA, c.n2_incr()).unwrap() >= 1.0 - 1e-9);
            assert!(conditional_power(-10.0, &c, ALPHA, c.n2_incr()).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn cp_matches_conditional_simulation() {
        // Z2 = (√n1·z1 + √ñ2·Z̃2)/√n2 with Z̃2 ~ N(θ̂√ñ2, 1), θ̂ = z1/√n1.
        let (z1, n1, n2) = (2.0, 60.0, 160.0);
        let c = counts(n1, n2);
        let incr = n2 - n1;
        let mut rng = RngStream::new(99, 0);
        let crit = 1.959_963_984_540_054;
        let draws = 1_000_000;
        let mean = z1 / n1.sqrt() * incr.sqrt();
        let hits = (0..draws)
            .filter(|_| {
                let z2i = mean + rng.standard_normal();
                (n1.sqrt() * z1 + incr.sqrt() * z2i) / n2.sqrt() > crit
            })
            .count();
        let mc = hits as f64 / draws as f64;
        let cp = conditional_power(z1, &c, ALPHA, incr).unwrap();
        assert!((cp - mc).abs() < 0.002, "cp {cp} vs mc {mc}");
    }

    #[test]
    fn cp_rejects_bad_inputs() {
        let c = counts(60.0, 160.0);
        assert!(conditional_power(1.0, &c, ALPHA, 0.0).is_err());
        assert!(conditional_power(1.0, &c, 0.0, 10.0).is_err());
        assert!(conditional_power(1.0, &c, 0.6, 10.0).is_err());
        assert!(StageCounts::new(0.0, 10.0).is_err());
        assert!(StageCounts::new(10.0, 10.0).is_err());
    }

    #[test]
    fn blends_collapse_when_prediction_equals_observation() {
        let c = counts(60.0, 160.0);
        for z1 in [-2.5, -0.3, 0.4, 1.1, 3.0] {
            for t in [0.1, 0.375, 2.0 / 3.0, 1.0] {
                let info = InfoFraction::new(t, Some(0.42)).unwrap();
                let cp = conditional_power(z1, &c, ALPHA, 100.0).unwrap();
                for v in McpWeight::ALL {
                    let m = modified_cp(v, z1, z1, &info, &c, ALPHA, 100.0).unwrap();
                    assert!((m - cp).abs() <= 1e-12, "{v} z1={z1} t={t}");
                }
            }
        }
    }

    #[test]
    fn linear_blend_with_full_information_is_plain_cp() {
        let c = counts(60.0, 160.0);
        let info = InfoFraction::new(1.0, None).unwrap();
        let m = modified_cp(McpWeight::Linear, 0.8, -3.0, &info, &c, ALPHA, 100.0).unwrap();
        assert_eq!(m, conditional_power(0.8, &c, ALPHA, 100.0).unwrap());
    }

    #[test]
    fn harmonic_blends_reject_sign_disagreement() {
        let c = counts(60.0, 160.0);
        let info = InfoFraction::new(0.5, Some(0.3)).unwrap();
        for v in [McpWeight::Harmonic, McpWeight::ControlCdfHarmonic] {
            assert!(matches!(
                modified_cp(v, -0.27, 1.73, &info, &c, ALPHA, 100.0),
                Err(Error::DegenerateWeight { .. })
            ));
            assert!(matches!(
                modified_cp(v, 0.0, 1.73, &info, &c, ALPHA, 100.0),
                Err(Error::DegenerateWeight { .. })
            ));
        }
        let curve = CpCurve::modified(McpWeight::Harmonic, -0.27, 1.73, &info, &c, ALPHA).unwrap();
        assert!(curve.fell_back);
        let linear = modified_cp(McpWeight::Linear, -0.27, 1.73, &info, &c, ALPHA, 100.0).unwrap();
        assert_eq!(curve.at(100.0), linear);
        let no_fc = InfoFraction::new(0.5, None).unwrap();
        assert!(matches!(
            modified_cp(McpWeight::ControlCdfHarmonic, 1.0, 1.0, &no_fc, &c, ALPHA, 100.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn predictions_follow_model_convention() {
        let null = HistoricalModel::default();
        for th in [-0.5, 0.0, 0.3] {
            let s = SurrogateReadout::risk_difference(th, Population::Full).unwrap();
            assert_eq!(predict_statistic(&null, &s), 0.0);
        }
        let identity = HistoricalModel::new(0.0, 1.0, Convention::Oriented).unwrap();
        let s = SurrogateReadout::risk_difference(0.2, Population::Subgroup).unwrap();
        assert_eq!(predict_statistic(&identity, &s), 0.2);

        // Two-point model through (0.19, 0.09) and (0.38, -1.73), log-rank sign.
        let slope = (-1.73 - 0.09) / (0.38 - 0.19);
        let model = HistoricalModel::new(0.09 - slope * 0.19, slope, Convention::LogRank).unwrap();
        let s = SurrogateReadout::risk_difference(0.38, Population::Subgroup).unwrap();
        assert!((predict_statistic(&model, &s) - 1.73).abs() < 1e-12);
        assert!(SurrogateReadout::risk_difference(1.2, Population::Full).is_err());
        assert!(SurrogateReadout::effect(1.2, Population::Full).is_ok());
    }

    #[test]
    fn schoenfeld_sizing() {
        assert_eq!(required_events(0.6, ALPHA, 0.9, 1.0, 1.0).unwrap(), 162);
        assert_eq!(required_events(0.66, ALPHA, 0.9, 1.0, 1.0).unwrap(), 244);
        assert!(required_events(1.0, ALPHA, 0.9, 1.0, 1.0).is_err());
        assert!(required_events(0.7, ALPHA, 0.9, 1.0, 0.65).is_err());
        // Divergence toward the margin.
        let mut prev = 0;
        for eps in [0.1, 0.05, 0.01, 0.001] {
            let d = required_events(0.65 - eps, ALPHA, 0.9, 1.0, 0.65).unwrap();
            assert!(d > prev);
            prev = d;
        }
        assert!(prev > 1_000_000);
    }

    #[test]
    fn vaccine_conversions() {
        assert_eq!(ve_from_hr(1.0).unwrap(), 0.0);
        assert!((ve_from_hr(0.3).unwrap() - 70.0).abs() < 1e-12);
        assert!((hr_from_ve(35.0).unwrap() - 0.65).abs() < 1e-12);
        for hr in [0.05, 0.3, 0.65, 1.0, 1.7] {
            assert!((hr_from_ve(ve_from_hr(hr).unwrap()).unwrap() - hr).abs() < 1e-12);
        }
        assert!(ve_from_hr(0.0).is_err());
    }

    #[test]
    fn vaccine_case_split_brackets_reported_total() {
        let s = vaccine_case_split(0.3, 0.65, 0.025, 0.9, 1.0).unwrap();
        assert_eq!(s.normal_approx, 85);
        assert_eq!(s.exact_first, 88);
        assert_eq!(s.exact_stable, 91);
    }

    #[test]
    fn covariance_special_cases() {
        let base = CovarianceInputs {
            n_control: [30.0, 80.0],
            n_treatment: [30.0, 80.0],
            var_full: [1.0, 1.0],
            var_subgroup: [1.0, 1.0],
            tau: 0.5,
        };
        let c = theoretical_stage_covariance(&base).unwrap();
        assert!((c[0][1] - 0.5_f64.sqrt()).abs() < 1e-12);
        assert!((c[0][2] - (60.0_f64 / 160.0).sqrt()).abs() < 1e-12);
        assert!((c[1][3] - (60.0_f64 / 160.0).sqrt()).abs() < 1e-12);
        for i in 0..4 {
            assert_eq!(c[i][i], 1.0);
            for k in 0..4 {
                assert!((c[i][k] - c[k][i]).abs() < 1e-15);
            }
        }

        let same = CovarianceInputs { n_control: [50.0, 50.0], n_treatment: [50.0, 50.0], ..base };
        let c = theoretical_stage_covariance(&same).unwrap();
        assert!((c[0][2] - 1.0).abs() < 1e-12);

        let whole = CovarianceInputs { tau: 1.0, ..base };
        let c = theoretical_stage_covariance(&whole).unwrap();
        assert!((c[0][1] - 1.0).abs() < 1e-12);
        assert!((c[0][3] - c[1][3]).abs() < 1e-12);

        assert!(theoretical_stage_covariance(&CovarianceInputs { tau: 0.0, ..base }).is_err());
        assert!(theoretical_stage_covariance(&CovarianceInputs { tau: 1.2, ..base }).is_err());
    }

    #[test]
    fn covariance_is_positive_semidefinite() {
        let inp = CovarianceInputs {
            n_control: [25.0, 90.0],
            n_treatment: [35.0, 70.0],
            var_full: [1.3, 0.8],
            var_subgroup: [2.0, 0.5],
            tau: 0.3,
        };
        let c = theoretical_stage_covariance(&inp).unwrap();
        // Cholesky succeeds iff PSD (with a tiny jitter for the semidefinite case).
        let mut l = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = c[i][i] + 1e-12 - s;
                    assert!(d >= 0.0, "not PSD at {i}");
                    l[i][j] = d.sqrt();
                } else {
                    l[i][j] = (c[i][j] - s) / l[j][j];
                }
            }
        }
    }
}
