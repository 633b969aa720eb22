use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use enrichsim::config::{
    parse_variant, resolve_seed, AnalyzeConfig, DecideConfig, GridKind, SimulationConfig, SizeConfig, CONFIG_KEYS,
};
use enrichsim::decision::{decide, InterimDecision, SsrFlag, Zone};
use enrichsim::error::Error;
use enrichsim::experiments::{read_results, run_grid, write_results, write_zone_table, GridCell};
use enrichsim::inference::{closed_test, StageStatistics, SurvivalSample};
use enrichsim::power::{
    conditional_power, hr_from_ve, required_events, vaccine_case_split, ve_from_hr, Convention, Population, StageCounts,
};

#[derive(Parser)]
#[command(
    name = "enrichsim",
    version,
    about = "Adaptive enrichment trial simulator with surrogate-modified conditional power",
    after_long_help = CONFIG_KEYS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (TOML, dotted keys; see --help for every key).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed. Falls back to ENRICHSIM_SEED, then run.seed, then 20240607.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replications per scenario and variant.
    #[arg(long, global = true)]
    reps: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Design variant (none, w1, w2, w3); repeat to run several.
    #[arg(long, global = true)]
    variant: Vec<String>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate operating characteristics over a scenario grid.
    Simulate,
    /// Estimate the family-wise type I error on the null scenarios, with and without futility.
    Calibrate,
    /// One interim decision from observed values.
    Decide,
    /// Required events for a log-rank test, with the binomial case split under a margin.
    Size {
        #[arg(long)]
        hr: Option<f64>,
        /// Alternative given as vaccine efficacy in percent instead of a hazard ratio.
        #[arg(long, conflicts_with = "hr")]
        ve: Option<f64>,
        /// One-sided level.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        power: Option<f64>,
        /// Null hazard ratio (1 for superiority).
        #[arg(long)]
        margin: Option<f64>,
        /// Null given as vaccine efficacy in percent.
        #[arg(long, conflicts_with = "margin")]
        ve_margin: Option<f64>,
        #[arg(long)]
        allocation: Option<f64>,
    },
    /// Log-rank statistics and the closed test on a subject-level data file.
    Analyze,
    /// Summaries and plot-ready tables from a finished simulation.
    Report,
}

struct Failure {
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Self { message: e.to_string(), code }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { message: message.into(), code: 2 }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Calibrate => calibrate(&cli),
        Command::Decide => run_decide(&cli),
        Command::Size { hr, ve, alpha, power, margin, ve_margin, allocation } => {
            size(&cli, SizeFlags { hr: *hr, ve: *ve, alpha: *alpha, power: *power, margin: *margin, ve_margin: *ve_margin, allocation: *allocation })
        }
        Command::Analyze => analyze(&cli),
        Command::Report => report(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn require_config(cli: &Cli) -> std::result::Result<&Path, Failure> {
    cli.config.as_deref().ok_or_else(|| usage("this command needs --config <FILE>"))
}

fn load_simulation(cli: &Cli) -> std::result::Result<SimulationConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => SimulationConfig::load(p)?,
        None => SimulationConfig::default(),
    };
    if !cli.variant.is_empty() {
        for v in &cli.variant {
            parse_variant(v)?;
        }
        cfg.run.variants = Some(cli.variant.clone());
    }
    if let Some(r) = cli.reps {
        if r == 0 {
            return Err(usage("--reps must be at least 1"));
        }
        cfg.run.replications = r;
    }
    Ok(cfg)
}

fn seed(cli: &Cli, config_seed: Option<u64>) -> std::result::Result<u64, Failure> {
    let env = std::env::var("ENRICHSIM_SEED").ok();
    Ok(resolve_seed(cli.seed, env.as_deref(), config_seed)?)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

/// Up to six decimals without trailing zeros.
fn num(x: f64) -> String {
    let s = format!("{x:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn print_cells(cells: &[GridCell]) {
    println!(
        "{:<24} {:<7} {:>15} {:>7} {:>7} {:>7} {:>7} {:>7} {:>13} {:>13}",
        "scenario", "variant", "power (se)", "P(fav)", "P(prom)", "P(enr)", "P(unf)", "P(fut)", "events", "months"
    );
    for c in cells {
        match &c.result {
            Ok(oc) => {
                let z = oc.zone_freq;
                println!(
                    "{:<24} {:<7} {:>7.4} ({:.4}) {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>6.1} events {:>6.1} months",
                    c.label, c.variant, oc.power, oc.power_se, z[0], z[1], z[2], z[3], z[4], oc.mean_events, oc.mean_duration
                );
            }
            Err(msg) => println!("{:<24} {:<7} failed: {msg}", c.label, c.variant),
        }
    }
}

fn simulate(cli: &Cli) -> CmdResult {
    let cfg = load_simulation(cli)?;
    let seed = seed(cli, cfg.run.seed)?;
    let grid = cfg.grid(cfg.run.replications)?;
    let total = grid.scenarios.len() * grid.variants.len();
    let mut done = 0;
    let cells = run_grid(&grid, &cfg.design, seed, |c| {
        done += 1;
        eprintln!("[{done}/{total}] {} {}", c.label, c.variant);
    })?;
    let dir = out_dir(cli);
    write_results(&dir, &cfg.run.name, &cfg, seed, &cells)?;
    println!("seed {seed}, {} replications per cell (probabilities; events; months)", grid.replications);
    print_cells(&cells);
    println!("wrote {}", dir.join(format!("{}.csv", cfg.run.name)).display());
    if cells.iter().any(|c| c.result.is_err()) {
        return Err(Failure { message: "some cells failed; see the error column".into(), code: 1 });
    }
    Ok(())
}

fn calibrate(cli: &Cli) -> CmdResult {
    let mut cfg = load_simulation(cli)?;
    if cli.config.is_none() && cli.variant.is_empty() {
        cfg.run.variants = Some(["none", "w1", "w2", "w3"].map(String::from).to_vec());
    }
    if cli.config.is_none() && cli.reps.is_none() {
        cfg.run.replications = 100_000;
    }
    if cfg.grid.kind != GridKind::Null {
        cfg.grid = Default::default();
        cfg.grid.kind = GridKind::Null;
        cfg.scenarios.clear();
    }
    let seed = seed(cli, cfg.run.seed)?;
    let alpha = cfg.design.alpha;
    let mut all = Vec::new();
    println!("family-wise type I error (probability of rejecting a true hypothesis), nominal {alpha}, seed {seed}");
    println!("{:<24} {:<7} {:<9} {:>9} {:>9} {:>12}", "scenario", "variant", "futility", "FWER", "se", "<= a + 3se");
    for futility in [false, true] {
        cfg.design.futility = futility;
        let grid = cfg.grid(cfg.run.replications)?;
        let cells = run_grid(&grid, &cfg.design, seed, |_| {})?;
        for c in &cells {
            match &c.result {
                Ok(oc) => println!(
                    "{:<24} {:<7} {:<9} {:>9.5} {:>9.5} {:>12}",
                    c.label,
                    c.variant,
                    if futility { "on" } else { "off" },
                    oc.power,
                    oc.power_se,
                    if oc.power <= alpha + 3.0 * oc.power_se { "yes" } else { "NO" }
                ),
                Err(msg) => println!("{:<24} {:<7} failed: {msg}", c.label, c.variant),
            }
        }
        all.extend(cells);
    }
    let dir = out_dir(cli);
    let stem = format!("{}_calibration", cfg.run.name);
    write_results(&dir, &stem, &cfg, seed, &all)?;
    println!("wrote {}", dir.join(format!("{stem}.csv")).display());
    Ok(())
}

fn run_decide(cli: &Cli) -> CmdResult {
    let mut cfg = DecideConfig::load(require_config(cli)?)?;
    match cli.variant.as_slice() {
        [] => {}
        [v] => cfg.decide.variant = parse_variant(v)?,
        _ => return Err(usage("decide takes at most one --variant")),
    }
    let snapshot = cfg.snapshot()?;
    let rule = cfg.rule();
    let d = decide(&snapshot, &rule)?;
    let benchmark = decide(&snapshot, &enrichsim::decision::DecisionRule { variant: None, ..rule })?;
    let conv = cfg.decide.convention;

    let variant = cfg.decide.variant.map_or("none", |v| v.label());
    println!("interim decision, variant {variant}, information fraction t = {}", snapshot.info.t());
    println!("{:<34} {:>12} {:>12}", "", "full", "subgroup");
    let row = |name: &str, f: f64, s: f64| println!("{name:<34} {f:>12.4} {s:>12.4}");
    let (f, s) = (&snapshot.full, &snapshot.subgroup);
    row("interim statistic (log-rank sign)", Convention::LogRank.from_oriented(f.z1), Convention::LogRank.from_oriented(s.z1));
    row("interim statistic (oriented)", f.z1, s.z1);
    if let (Some(pf), Some(ps)) = (f.predicted, s.predicted) {
        row("predicted statistic (log-rank sign)", Convention::LogRank.from_oriented(pf), Convention::LogRank.from_oriented(ps));
        row("predicted statistic (oriented)", pf, ps);
    }
    println!("{:<34} {:>12.0} {:>12.0}", "interim events", f.counts.n1(), s.counts.n1());
    println!("{:<34} {:>12.0} {:>12.0}", "planned total events", f.counts.n2(), s.counts.n2());
    let cp = |p: &enrichsim::decision::PopulationInterim| conditional_power(p.z1, &p.counts, rule.alpha, p.counts.n2_incr());
    row("conditional power (probability)", cp(f)?, cp(s)?);
    if cfg.decide.variant.is_some() {
        row("modified CP (probability)", d.cp_full, d.cp_subgroup);
        if d.fallback_full || d.fallback_subgroup {
            println!("note: harmonic weight fell back to the linear one (full {}, subgroup {})", d.fallback_full, d.fallback_subgroup);
        }
    }
    println!("zone without surrogate: {}", benchmark.zone);
    println!("zone: {}", d.zone);
    print_selection(&d, &snapshot);
    if conv == Convention::LogRank {
        println!("statistics were read in the log-rank sign convention (negative favours treatment)");
    }
    Ok(())
}

fn print_selection(d: &InterimDecision, snapshot: &enrichsim::decision::InterimSnapshot) {
    let Some(p) = d.selected else {
        println!("selected population: none (trial stops)");
        return;
    };
    let pop = snapshot.population(p);
    let name = match p {
        Population::Full => "full",
        Population::Subgroup => "subgroup",
    };
    println!("selected population: {name}");
    println!(
        "second-stage events: planned {} events, re-estimated {} events (total {} events, cap {} events)",
        d.n2_incr_planned,
        d.n2_incr_final,
        pop.counts.n1() as u32 + d.n2_incr_final,
        pop.cap_total
    );
    if let Some(flag) = d.ssr_flag {
        let why = match flag {
            SsrFlag::CapBinding => "target power not reached within the cap",
            SsrFlag::NonMonotone => "power at the cap below power at the planned size",
        };
        println!("re-estimation stopped at the cap: {why}");
    }
    if matches!(d.zone, Zone::Favorable) {
        println!("favorable zone keeps the planned size");
    }
}

struct SizeFlags {
    hr: Option<f64>,
    ve: Option<f64>,
    alpha: Option<f64>,
    power: Option<f64>,
    margin: Option<f64>,
    ve_margin: Option<f64>,
    allocation: Option<f64>,
}

fn size(cli: &Cli, flags: SizeFlags) -> CmdResult {
    let mut s = match &cli.config {
        Some(p) => SizeConfig::load(p)?.size,
        None => Default::default(),
    };
    if let Some(h) = flags.hr {
        s.hr_alt = h;
    }
    if let Some(v) = flags.ve {
        s.hr_alt = hr_from_ve(v)?;
    }
    if let Some(m) = flags.margin {
        s.margin = m;
    }
    if let Some(v) = flags.ve_margin {
        s.margin = hr_from_ve(v)?;
    }
    s.alpha = flags.alpha.unwrap_or(s.alpha);
    s.power = flags.power.unwrap_or(s.power);
    s.allocation = flags.allocation.unwrap_or(s.allocation);

    let d = required_events(s.hr_alt, s.alpha, s.power, s.allocation, s.margin)?;
    println!(
        "alternative hazard ratio {} (efficacy {:.1}%), null hazard ratio {}, one-sided alpha {}, power {}, allocation {}:1",
        num(s.hr_alt),
        ve_from_hr(s.hr_alt)?,
        num(s.margin),
        num(s.alpha),
        num(s.power),
        num(s.allocation)
    );
    println!("Schoenfeld approximation: {d} events");
    if s.margin < 1.0 {
        let c = vaccine_case_split(s.hr_alt, s.margin, s.alpha, s.power, s.allocation)?;
        println!("conditional binomial on the case split:");
        println!("  normal approximation:               {} events", c.normal_approx);
        println!("  exact test, first N reaching power: {} events", c.exact_first);
        println!("  exact test, power kept for all N:   {} events", c.exact_stable);
    }
    Ok(())
}

fn analyze(cli: &Cli) -> CmdResult {
    let cfg = AnalyzeConfig::load(require_config(cli)?)?.analyze;
    let sample = SurvivalSample::from_csv_path(&cfg.data)?;
    println!("{} subjects from {}", sample.len(), cfg.data.display());
    println!("{:<10} {:>10} {:>12} {:>12} {:>10}", "population", "cut", "events", "z (log-rank)", "z (oriented)");
    let at = |p: Population, cut: f64| -> std::result::Result<enrichsim::inference::LogRank, Failure> {
        let lr = sample.logrank(p, cut)?;
        println!("{:<10} {:>5.2} months {:>5} events {:>12.4} {:>12.4}", p.label(), cut, lr.events, lr.z_logrank(), lr.z);
        Ok(lr)
    };
    let final_f = at(Population::Full, cfg.final_cut);
    let final_s = at(Population::Subgroup, cfg.final_cut)?;
    let Some(cut1) = cfg.stage1_cut else {
        final_f?;
        return Ok(());
    };
    if cut1 >= cfg.final_cut {
        return Err(usage("analyze.stage1_cut must precede analyze.final_cut"));
    }
    let s1_f = at(Population::Full, cut1)?;
    let s1_s = at(Population::Subgroup, cut1)?;
    let full_continues = cfg.selected == Population::Full;
    let final_f = if full_continues { Some(final_f?) } else { None };
    let stats = StageStatistics {
        z1_s: s1_s.z,
        z1_f: s1_f.z,
        z2_s: final_s.z,
        z2_f: final_f.map(|l| l.z),
        d1_s: s1_s.events as f64,
        d1_f: s1_f.events as f64,
        d2_s: final_s.events as f64,
        d2_f: final_f.map(|l| l.events as f64),
    };
    let decision = InterimDecision {
        zone: if full_continues { Zone::Promising } else { Zone::Enrichment },
        selected: Some(cfg.selected),
        n2_incr_final: 0,
        n2_incr_planned: 0,
        cp_full: f64::NAN,
        cp_subgroup: f64::NAN,
        fallback_full: false,
        fallback_subgroup: false,
        ssr_flag: None,
    };
    let planned = StageCounts::new(cfg.planned_n1, cfg.planned_n2)?;
    let r = closed_test(&stats, &decision, &planned, cfg.alpha)?;
    let show = |name: &str, z: Option<f64>, rej: bool| {
        if let Some(z) = z {
            println!(
                "{name:<28} CHW {:>8.4} (log-rank sign {:>8.4}) reject: {}",
                z,
                Convention::LogRank.from_oriented(z),
                if rej { "yes" } else { "no" }
            );
        }
    };
    println!("closed test in {} at one-sided level {}", cfg.selected.label(), cfg.alpha);
    show("elementary hypothesis", r.z_chw_elementary, r.reject_elementary);
    show("intersection hypothesis", r.z_chw_intersection, r.reject_intersection);
    println!("efficacy claimed: {}", if r.reject_overall { "yes" } else { "no" });
    Ok(())
}

fn report(cli: &Cli) -> CmdResult {
    let name = match &cli.config {
        Some(p) => SimulationConfig::load(p)?.run.name,
        None => "results".to_owned(),
    };
    let dir = out_dir(cli);
    let results = read_results(&dir.join(format!("{name}.json")))?;
    println!("results {name}: seed {}, config sha256 {}", results.seed, results.config_hash);
    print_cells(&results.cells);

    let variants: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for c in &results.cells {
            if !v.contains(&c.variant.as_str()) {
                v.push(&c.variant);
            }
        }
        v
    };
    if variants.len() > 1 {
        println!();
        print!("{:<24}", "power by variant");
        for v in &variants {
            print!(" {v:>8}");
        }
        println!();
        let mut labels: Vec<&str> = Vec::new();
        for c in &results.cells {
            if !labels.contains(&c.label.as_str()) {
                labels.push(&c.label);
            }
        }
        for l in labels {
            print!("{l:<24}");
            for v in &variants {
                let p = results
                    .cells
                    .iter()
                    .find(|c| c.label == l && c.variant == *v)
                    .and_then(|c| c.result.as_ref().ok())
                    .map_or(f64::NAN, |oc| oc.power);
                print!(" {p:>8.4}");
            }
            println!();
        }
    }

    let zones = dir.join(format!("{name}_zones.csv"));
    let file = std::fs::File::create(&zones).map_err(Error::from)?;
    write_zone_table(file, &results.cells)?;
    std::io::stdout().flush().ok();
    println!("wrote {}", zones.display());
    Ok(())
}
