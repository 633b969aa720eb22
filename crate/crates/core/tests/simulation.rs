use std::path::PathBuf;

use enrichsim::config::{DecideConfig, SimulationConfig};
use enrichsim::decision::{decide, DecisionRule, Zone, ZoneThresholds};
use enrichsim::experiments::{compare_variants, null_grid, run_grid, simulate_scenario, write_csv};
use enrichsim::power::{theoretical_stage_covariance, CovarianceInputs, McpWeight, Population};
use enrichsim::sim::{run_replication_with, DesignSpec, Scenario, Workspace};
use enrichsim::stats::RngStream;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn corr(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn stage_statistic_correlations_match_theory() {
    // Zero thresholds make every trial favourable, so all four statistics
    // exist and the design is the fixed one.
    let spec = DesignSpec {
        thresholds: ZoneThresholds {
            favorable: 0.0,
            promising_full: 0.0,
            enrichment_subgroup: 0.0,
            futility_full: 0.0,
            futility_subgroup: 0.0,
        },
        futility: false,
        mcp_variant: None,
        ..DesignSpec::default()
    };
    let scenario = Scenario::null(-0.6);
    let reps = 10_000;
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut ws = Workspace::new();
    for r in 0..reps {
        let mut rng = RngStream::new(11, r);
        let o = run_replication_with(&mut rng, &scenario, &spec, &mut ws).unwrap();
        assert_eq!(o.zone(), Zone::Favorable);
        let pooled = o.stages.expect("stage statistics").pooled();
        for (c, v) in cols.iter_mut().zip(pooled) {
            c.push(v.expect("all four statistics"));
        }
    }
    let d1 = f64::from(spec.d1_total) / 2.0;
    let d2 = f64::from(spec.d1_total + spec.d2_planned) / 2.0;
    let theory = theoretical_stage_covariance(&CovarianceInputs {
        n_control: [d1, d2],
        n_treatment: [d1, d2],
        var_full: [1.0, 1.0],
        var_subgroup: [1.0, 1.0],
        tau: scenario.tau,
    })
    .unwrap();
    for i in 0..4 {
        for k in (i + 1)..4 {
            let emp = corr(&cols[i], &cols[k]);
            assert!(
                (emp - theory[i][k]).abs() <= 0.03,
                "entry ({i},{k}): empirical {emp:.4}, theory {:.4}",
                theory[i][k]
            );
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let grid = null_grid(300, vec![None, Some(McpWeight::Linear)], true);
    let spec = DesignSpec::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cells = run_grid(&grid, &spec, 42, |_| {}).unwrap();
            let mut buf = Vec::new();
            write_csv(&mut buf, &cells).unwrap();
            buf
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
}

#[test]
fn variants_share_random_numbers() {
    // Every variant replays replication r from stream r, so a comparison
    // reproduces the stand-alone runs of each variant.
    let grid = null_grid(200, vec![None, Some(McpWeight::Linear)], true);
    let cmp = compare_variants(&grid, &DesignSpec::default(), 5).unwrap();
    for (c, sc) in cmp.iter().zip(&grid.scenarios) {
        for v in [None, Some(McpWeight::Linear)] {
            let spec = DesignSpec { mcp_variant: v, ..DesignSpec::default() };
            let alone = simulate_scenario(&sc.scenario, &spec, 200, 5).unwrap();
            let wins = alone.iter().filter(|t| t.success).count() as f64 / 200.0;
            assert_eq!(c.variant(v).unwrap().power, wins);
        }
        let base = c.delta(None).unwrap();
        assert_eq!((base.power, base.power_se, base.events), (0.0, 0.0, 0.0));
        let d = c.delta(Some(McpWeight::Linear)).unwrap();
        let diff = c.variant(Some(McpWeight::Linear)).unwrap().power - c.variant(None).unwrap().power;
        assert!((d.power - diff).abs() < 1e-12);
    }
}

#[test]
fn bundled_oncology_interim() {
    let cfg = DecideConfig::load(&configs().join("oncology_interim.cfg")).unwrap();
    let snap = cfg.snapshot().unwrap();
    let with = decide(&snap, &cfg.rule()).unwrap();
    let without = decide(&snap, &DecisionRule { variant: None, ..cfg.rule() }).unwrap();
    assert_eq!(without.zone, Zone::Futility);
    assert_eq!(with.zone, Zone::Enrichment);
    assert_eq!(with.selected, Some(Population::Subgroup));
    let total = snap.subgroup.counts.n1() + f64::from(with.n2_incr_final);
    assert!((total - 168.0).abs() <= 4.0, "subgroup total {total}");
}

#[test]
fn bundled_vaccine_interim() {
    let cfg = DecideConfig::load(&configs().join("vaccine_interim.cfg")).unwrap();
    let snap = cfg.snapshot().unwrap();
    let with = decide(&snap, &cfg.rule()).unwrap();
    let without = decide(&snap, &DecisionRule { variant: None, ..cfg.rule() }).unwrap();
    assert_eq!(without.zone, Zone::Enrichment);
    assert_eq!(with.zone, Zone::Promising);
    assert!((with.cp_subgroup - 0.98).abs() <= 0.03, "{}", with.cp_subgroup);
    assert!((with.cp_full - 0.77).abs() <= 0.03, "{}", with.cp_full);
    assert_eq!(snap.full.counts.n1() + f64::from(with.n2_incr_final), 112.0);
}

#[test]
fn bundled_simulation_config_loads() {
    let cfg = SimulationConfig::load(&configs().join("table3_setA.cfg")).unwrap();
    let grid = cfg.grid(10).unwrap();
    assert_eq!(grid.scenarios.len(), 1);
    assert_eq!(grid.scenarios[0].label, "a/phi=0/rho=-0.6");
    assert_eq!(grid.variants, vec![None, Some(McpWeight::Linear)]);
}
