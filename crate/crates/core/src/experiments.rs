//! Scenario grids, operating characteristics and result files.
//!
//! Replication `r` of every scenario and every design variant draws from
//! stream `r` of the run seed, so variants are compared on common random
//! numbers. Replications run on the current rayon pool; results are
//! gathered in replication order before aggregation, which makes every
//! aggregate independent of the worker count.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decision::Zone;
use crate::error::{Error, Result};
use crate::power::McpWeight;
use crate::sim::{run_replication_with, DesignSpec, ReplicationOutcome, Scenario, Workspace};
use crate::stats::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScenario {
    pub label: String,
    pub scenario: Scenario,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub scenarios: Vec<LabeledScenario>,
    pub replications: u64,
    /// Design variants; `None` is the benchmark on plain conditional power.
    pub variants: Vec<Option<McpWeight>>,
    pub futility: bool,
}

impl ScenarioGrid {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::domain("a grid needs at least one replication"));
        }
        if self.scenarios.is_empty() || self.variants.is_empty() {
            return Err(Error::domain("a grid needs at least one scenario and one variant"));
        }
        let mut seen = HashSet::new();
        for s in &self.scenarios {
            if !seen.insert(s.label.as_str()) {
                return Err(Error::domain(format!("duplicate scenario label `{}`", s.label)));
            }
        }
        let mut seen = HashSet::new();
        for v in &self.variants {
            if !seen.insert(*v) {
                return Err(Error::domain(format!("duplicate variant `{}`", variant_label(*v))));
            }
        }
        Ok(())
    }
}

pub fn variant_label(v: Option<McpWeight>) -> &'static str {
    v.map_or("none", McpWeight::label)
}

/// Hazard ratios and surrogate effects of the four alternative settings,
/// `(set, hr_full, hr_subgroup, theta_full, theta_subgroup)`.
pub const ALTERNATIVE_SETS: [(&str, f64, f64, f64, f64); 4] =
    [("a", 0.6, 0.6, 0.4, 0.4), ("b", 0.7, 0.6, 0.2, 0.3), ("c", 0.7, 0.7, 0.3, 0.3), ("d", 0.8, 0.6, 0.2, 0.4)];
pub const PHI_LEVELS: [f64; 3] = [0.0, 0.2, -0.2];
pub const RHO_LEVELS: [f64; 3] = [-0.3, -0.6, -0.9];

pub fn scenario_label(set: &str, phi: f64, rho: f64) -> String {
    format!("{set}/phi={phi}/rho={rho}")
}

/// One alternative scenario by set name.
pub fn alternative(set: &str, phi: f64, rho: f64) -> Result<Scenario> {
    let &(_, hr_full, hr_subgroup, theta_full, theta_subgroup) = ALTERNATIVE_SETS
        .iter()
        .find(|s| s.0 == set)
        .ok_or_else(|| Error::domain(format!("unknown scenario set `{set}`")))?;
    let sc = Scenario { hr_full, hr_subgroup, theta_full, theta_subgroup, phi, rho, ..Scenario::null(rho) };
    sc.validate()?;
    Ok(sc)
}

/// The 36 alternative scenarios: four sets, three prediction offsets and
/// three correlations, numbered in that nesting order.
pub fn alternative_grid(replications: u64, variants: Vec<Option<McpWeight>>) -> ScenarioGrid {
    let mut scenarios = Vec::with_capacity(36);
    for (set, ..) in ALTERNATIVE_SETS {
        for phi in PHI_LEVELS {
            for rho in RHO_LEVELS {
                let scenario = alternative(set, phi, rho).expect("built-in scenarios are valid");
                scenarios.push(LabeledScenario { label: scenario_label(set, phi, rho), scenario });
            }
        }
    }
    ScenarioGrid { scenarios, replications, variants, futility: true }
}

/// Null scenarios at each correlation level.
pub fn null_grid(replications: u64, variants: Vec<Option<McpWeight>>, futility: bool) -> ScenarioGrid {
    let scenarios = RHO_LEVELS
        .iter()
        .map(|&rho| LabeledScenario { label: format!("null/rho={rho}"), scenario: Scenario::null(rho) })
        .collect();
    ScenarioGrid { scenarios, replications, variants, futility }
}

/// The per-replication facts that aggregates are built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSummary {
    pub zone: Zone,
    pub success: bool,
    pub duration: f64,
    pub events: u32,
}

impl From<&ReplicationOutcome> for TrialSummary {
    fn from(o: &ReplicationOutcome) -> Self {
        Self { zone: o.zone(), success: o.success(), duration: o.duration, events: o.total_events }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub label: String,
    pub variant: String,
    pub futility: bool,
    pub replications: u64,
    /// Indexed like [`Zone::ALL`].
    pub zone_freq: [f64; 5],
    pub zone_se: [f64; 5],
    /// Probability of rejecting the elementary and the intersection
    /// hypothesis in the selected population.
    pub power: f64,
    pub power_se: f64,
    /// Months.
    pub mean_duration: f64,
    pub duration_se: f64,
    pub mean_events: f64,
    pub events_se: f64,
}

pub fn proportion_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

impl OperatingCharacteristics {
    /// Aggregates summaries in the order given.
    pub fn from_summaries(label: &str, variant: &str, futility: bool, s: &[TrialSummary]) -> Self {
        let n = s.len() as u64;
        let mut counts = [0u64; 5];
        let mut wins = 0u64;
        for t in s {
            counts[t.zone.index()] += 1;
            wins += u64::from(t.success);
        }
        let zone_freq = counts.map(|c| c as f64 / n as f64);
        let power = wins as f64 / n as f64;
        let (mean_duration, duration_se) = mean_and_se(s.iter().map(|t| t.duration), s.len());
        let (mean_events, events_se) = mean_and_se(s.iter().map(|t| f64::from(t.events)), s.len());
        Self {
            label: label.to_owned(),
            variant: variant.to_owned(),
            futility,
            replications: n,
            zone_freq,
            zone_se: zone_freq.map(|p| proportion_se(p, n)),
            power,
            power_se: proportion_se(power, n),
            mean_duration,
            duration_se,
            mean_events,
            events_se,
        }
    }

    pub fn zone(&self, z: Zone) -> f64 {
        self.zone_freq[z.index()]
    }
}

/// Runs `replications` trials of one scenario and returns their summaries
/// in replication order.
pub fn simulate_scenario(
    scenario: &Scenario,
    spec: &DesignSpec,
    replications: u64,
    seed: u64,
) -> Result<Vec<TrialSummary>> {
    spec.validate()?;
    scenario.validate()?;
    (0..replications)
        .into_par_iter()
        .map_init(Workspace::new, |ws, r| {
            let mut rng = RngStream::new(seed, r);
            run_replication_with(&mut rng, scenario, spec, ws).map(|o| TrialSummary::from(&o))
        })
        .collect()
}

pub fn run_scenario(
    labeled: &LabeledScenario,
    spec: &DesignSpec,
    replications: u64,
    seed: u64,
) -> Result<OperatingCharacteristics> {
    let s = simulate_scenario(&labeled.scenario, spec, replications, seed)?;
    Ok(OperatingCharacteristics::from_summaries(&labeled.label, variant_label(spec.mcp_variant), spec.futility, &s))
}

/// Result of one (scenario, variant) cell. A failing cell carries its
/// diagnostic instead of aborting the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub label: String,
    pub variant: String,
    pub result: std::result::Result<OperatingCharacteristics, String>,
}

fn cell_spec(base: &DesignSpec, grid: &ScenarioGrid, v: Option<McpWeight>) -> DesignSpec {
    DesignSpec { mcp_variant: v, futility: grid.futility, ..*base }
}

/// Runs every scenario under every variant of `grid`.
///
/// `progress` is called once per finished cell.
pub fn run_grid(
    grid: &ScenarioGrid,
    spec: &DesignSpec,
    seed: u64,
    mut progress: impl FnMut(&GridCell),
) -> Result<Vec<GridCell>> {
    grid.validate()?;
    let mut cells = Vec::with_capacity(grid.scenarios.len() * grid.variants.len());
    for sc in &grid.scenarios {
        for &v in &grid.variants {
            let result = run_scenario(sc, &cell_spec(spec, grid, v), grid.replications, seed).map_err(|e| e.to_string());
            let cell = GridCell { label: sc.label.clone(), variant: variant_label(v).to_owned(), result };
            progress(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Difference of one variant from the baseline on the same replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantDelta {
    pub variant: String,
    pub power: f64,
    /// Standard error of the paired power difference.
    pub power_se: f64,
    pub events: f64,
    pub duration: f64,
    pub zone_freq: [f64; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub label: String,
    pub baseline: String,
    pub per_variant: Vec<OperatingCharacteristics>,
    pub deltas: Vec<VariantDelta>,
}

impl VariantComparison {
    pub fn variant(&self, v: Option<McpWeight>) -> Option<&OperatingCharacteristics> {
        self.per_variant.iter().find(|oc| oc.variant == variant_label(v))
    }

    pub fn delta(&self, v: Option<McpWeight>) -> Option<&VariantDelta> {
        self.deltas.iter().find(|d| d.variant == variant_label(v))
    }
}

fn paired_delta(variant: &str, base: &[TrialSummary], other: &[TrialSummary]) -> VariantDelta {
    let n = base.len();
    let diffs = base.iter().zip(other).map(|(b, o)| f64::from(u8::from(o.success)) - f64::from(u8::from(b.success)));
    let (power, power_se) = mean_and_se(diffs, n);
    let nf = n as f64;
    let events = other.iter().zip(base).map(|(o, b)| f64::from(o.events) - f64::from(b.events)).sum::<f64>() / nf;
    let duration = other.iter().zip(base).map(|(o, b)| o.duration - b.duration).sum::<f64>() / nf;
    let mut zone_freq = [0.0; 5];
    for (o, b) in other.iter().zip(base) {
        zone_freq[o.zone.index()] += 1.0 / nf;
        zone_freq[b.zone.index()] -= 1.0 / nf;
    }
    VariantDelta { variant: variant.to_owned(), power, power_se, events, duration, zone_freq }
}

/// Runs every variant of `grid` on common random numbers and reports each
/// variant against the baseline: the benchmark (`none`) when present,
/// otherwise the first variant listed.
pub fn compare_variants(grid: &ScenarioGrid, spec: &DesignSpec, seed: u64) -> Result<Vec<VariantComparison>> {
    grid.validate()?;
    if grid.variants.len() < 2 {
        return Err(Error::domain("comparing variants needs at least two of them"));
    }
    let base_idx = grid.variants.iter().position(Option::is_none).unwrap_or(0);
    let mut out = Vec::with_capacity(grid.scenarios.len());
    for sc in &grid.scenarios {
        let runs = grid
            .variants
            .iter()
            .map(|&v| simulate_scenario(&sc.scenario, &cell_spec(spec, grid, v), grid.replications, seed))
            .collect::<Result<Vec<_>>>()?;
        let per_variant = grid
            .variants
            .iter()
            .zip(&runs)
            .map(|(&v, s)| OperatingCharacteristics::from_summaries(&sc.label, variant_label(v), grid.futility, s))
            .collect();
        let deltas = grid
            .variants
            .iter()
            .zip(&runs)
            .map(|(&v, s)| paired_delta(variant_label(v), &runs[base_idx], s))
            .collect();
        out.push(VariantComparison {
            label: sc.label.clone(),
            baseline: variant_label(grid.variants[base_idx]).to_owned(),
            per_variant,
            deltas,
        });
    }
    Ok(out)
}

/// CSV columns, in file order.
pub const CSV_COLUMNS: [&str; 20] = [
    "scenario",
    "variant",
    "futility",
    "replications",
    "power",
    "power_se",
    "p_favorable",
    "p_promising",
    "p_enrichment",
    "p_unfavorable",
    "p_futility",
    "se_favorable",
    "se_promising",
    "se_enrichment",
    "se_unfavorable",
    "se_futility",
    "mean_duration_months",
    "duration_se_months",
    "mean_events",
    "events_se",
];

/// Writes one row per cell; failed cells keep their row with empty values
/// and the diagnostic in a trailing `error` column.
pub fn write_csv<W: Write>(out: W, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    header.push("error");
    w.write_record(&header).map_err(csv_err)?;
    for c in cells {
        let mut row = vec![c.label.clone(), c.variant.clone()];
        match &c.result {
            Ok(oc) => {
                row.push(oc.futility.to_string());
                row.push(oc.replications.to_string());
                row.push(format!("{:.6}", oc.power));
                row.push(format!("{:.6}", oc.power_se));
                row.extend(oc.zone_freq.iter().map(|p| format!("{p:.6}")));
                row.extend(oc.zone_se.iter().map(|p| format!("{p:.6}")));
                for x in [oc.mean_duration, oc.duration_se, oc.mean_events, oc.events_se] {
                    row.push(format!("{x:.4}"));
                }
                row.push(String::new());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), CSV_COLUMNS.len() - 2));
                row.push(msg.clone());
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// SHA-256 of a serialisable configuration, in hex.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct Sidecar<'a, C: Serialize> {
    config_hash: String,
    seed: u64,
    columns: Vec<&'static str>,
    config: &'a C,
    cells: &'a [GridCell],
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_results<C: Serialize>(dir: &Path, stem: &str, config: &C, seed: u64, cells: &[GridCell]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(std::fs::File::create(&csv_path)?, cells)?;
    let sidecar = Sidecar { config_hash: config_hash(config)?, seed, columns: CSV_COLUMNS.to_vec(), config, cells };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

/// The parts of a JSON sidecar needed to rebuild reports.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ResultsFile {
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<GridCell>,
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Zone frequencies in long format (one row per scenario, variant and
/// zone), ready for plotting.
pub fn write_zone_table<W: Write>(out: W, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["scenario", "variant", "zone", "probability", "se"]).map_err(csv_err)?;
    for c in cells {
        let Ok(oc) = &c.result else { continue };
        for z in Zone::ALL {
            let i = z.index();
            w.write_record([
                c.label.as_str(),
                c.variant.as_str(),
                z.label(),
                &format!("{:.6}", oc.zone_freq[i]),
                &format!("{:.6}", oc.zone_se[i]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_and_labels() {
        let g = alternative_grid(10, vec![None, Some(McpWeight::Linear)]);
        assert_eq!(g.scenarios.len(), 36);
        assert!(g.validate().is_ok());
        assert_eq!(g.scenarios[0].label, "a/phi=0/rho=-0.3");
        assert_eq!(g.scenarios[35].label, "d/phi=-0.2/rho=-0.9");
        let d = &g.scenarios[27].scenario;
        assert_eq!((d.hr_full, d.hr_subgroup, d.theta_full, d.theta_subgroup), (0.8, 0.6, 0.2, 0.4));

        let mut dup = g.clone();
        dup.scenarios[1].label = dup.scenarios[0].label.clone();
        assert!(dup.validate().is_err());
        assert!(ScenarioGrid { replications: 0, ..g }.validate().is_err());
    }

    #[test]
    fn zones_partition_and_power_bound() {
        let mut g = alternative_grid(10, vec![Some(McpWeight::Linear)]);
        g.scenarios.truncate(2);
        let cells = run_grid(&g, &DesignSpec::default(), 7, |_| {}).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            let oc = c.result.as_ref().unwrap();
            assert!((oc.zone_freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(oc.power <= 1.0 - oc.zone(Zone::Futility) + 1e-12);
        }
    }

    #[test]
    fn failing_cell_does_not_abort_grid() {
        let mut g = alternative_grid(5, vec![None]);
        g.scenarios.truncate(2);
        g.scenarios[1].scenario.rho = 1.5;
        let cells = run_grid(&g, &DesignSpec::default(), 1, |_| {}).unwrap();
        assert!(cells[0].result.is_ok());
        assert!(cells[1].result.as_ref().unwrap_err().contains("rho"));
        let mut buf = Vec::new();
        write_csv(&mut buf, &cells).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().starts_with("scenario,variant,futility"));
    }

    #[test]
    fn comparison_baseline_is_zero() {
        let mut g = alternative_grid(50, vec![Some(McpWeight::Linear), None]);
        g.scenarios.truncate(1);
        let cmp = compare_variants(&g, &DesignSpec::default(), 3).unwrap();
        assert_eq!(cmp[0].baseline, "none");
        let base = cmp[0].delta(None).unwrap();
        assert_eq!(base.power, 0.0);
        assert_eq!(base.events, 0.0);
        assert!(base.zone_freq.iter().all(|&z| z == 0.0));
        let w1 = cmp[0].delta(Some(McpWeight::Linear)).unwrap();
        let oc = |v| cmp[0].variant(v).unwrap().power;
        assert!((w1.power - (oc(Some(McpWeight::Linear)) - oc(None))).abs() < 1e-12);
        assert!(compare_variants(&alternative_grid(5, vec![None]), &DesignSpec::default(), 3).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let spec = DesignSpec::default();
        assert_eq!(config_hash(&spec).unwrap(), config_hash(&spec).unwrap());
        assert_ne!(config_hash(&spec).unwrap(), config_hash(&DesignSpec { alpha: 0.05, ..spec }).unwrap());
        assert_eq!(config_hash(&spec).unwrap().len(), 64);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = null_grid(20, vec![None], false);
        let cells = run_grid(&grid, &DesignSpec::default(), 3, |_| {}).unwrap();
        write_results(dir.path(), "r", &grid, 3, &cells).unwrap();
        let back = read_results(&dir.path().join("r.json")).unwrap();
        assert_eq!(back.seed, 3);
        assert_eq!(back.cells, cells);
        let mut buf = Vec::new();
        write_zone_table(&mut buf, &cells).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 5 * cells.len());
    }
}
