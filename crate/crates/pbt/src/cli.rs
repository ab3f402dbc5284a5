//! The `run`, `suite` and `analyze` commands behind the binary.
//!
//! `run` executes one experiment and writes the full artifact set (curves,
//! events, checkpoints, best member, resolved config) into the run
//! directory; a failed run leaves its partial artifacts plus a FAILED
//! marker, never a silent partial success. `suite` executes a multi-run
//! protocol over a seed list and writes summary.csv with per-variant
//! medians. `analyze` post-processes an existing run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::analysis::{self, LineageEvent};
use crate::config::{self, Resolved};
use crate::core::MemberState;
use crate::engine::{self, ExecMode, RunReport};
use crate::strategies::{ExploitConfig, ExploreConfig};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<ExecMode>,
    pub out: Option<PathBuf>,
}

fn apply_overrides(resolved: &mut Resolved, ov: &Overrides) {
    if let Some(seed) = ov.seed {
        resolved.experiment.seed = seed;
        resolved.file.experiment.seed = seed;
    }
    if let Some(mode) = ov.mode {
        resolved.experiment.mode = mode;
        resolved.file.experiment.mode = mode;
    }
    if let Some(out) = &ov.out {
        resolved.out_dir = Some(out.clone());
    }
}

fn require_out_dir(resolved: &Resolved) -> Result<PathBuf> {
    resolved
        .out_dir
        .clone()
        .context("no output directory: set [output] dir in the config or pass --out")
}

/// Run one experiment end to end, writing all artifacts into the run
/// directory.
pub fn cmd_run(config_path: &Path, ov: &Overrides) -> Result<RunReport> {
    let mut resolved = config::parse_config(config_path)?;
    apply_overrides(&mut resolved, ov);
    let dir = require_out_dir(&resolved)?;
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("resolved_config.toml"),
        config::to_toml(&config::resolved_file(&resolved)),
    )?;

    match engine::run_experiment(&resolved.experiment, resolved.task.as_ref(), Some(&dir)) {
        Ok(report) => {
            println!(
                "run complete: best member {} with p = {} after {} steps ({} events) -> {}",
                report.best.id,
                report.best.p,
                report.best.t,
                report.events.len(),
                dir.display()
            );
            Ok(report)
        }
        Err(e) => {
            fs::write(dir.join("FAILED"), format!("{e}\n"))?;
            Err(e).context("experiment failed; partial artifacts retained")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    /// Toy-quadratic variants: pbt, exploit-only, explore-only, grid.
    Fig2,
    /// hyperparams-only, weights-only and final-h-replay against full PBT.
    Ablations,
    /// Population-size sweep.
    Popsize,
}

impl std::str::FromStr for SuiteKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(SuiteKind::Fig2),
            "ablations" => Ok(SuiteKind::Ablations),
            "popsize" => Ok(SuiteKind::Popsize),
            other => bail!("unknown suite `{other}` (expected fig2, ablations or popsize)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub variant: String,
    pub seeds: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Run a named multi-run protocol over the configured seed list and write
/// summary.csv (per-variant median and spread of the final best score).
pub fn cmd_suite(config_path: &Path, suite: SuiteKind, ov: &Overrides) -> Result<Vec<SuiteRow>> {
    let mut resolved = config::parse_config(config_path)?;
    apply_overrides(&mut resolved, ov);
    let dir = require_out_dir(&resolved)?;
    fs::create_dir_all(&dir)?;

    let mut seeds = resolved.suite.seeds.clone();
    if let Some(base) = ov.seed {
        seeds = (base..base + seeds.len() as u64).collect();
    }
    let task = resolved.task.as_ref();
    let base_cfg = &resolved.experiment;

    let mut rows: Vec<SuiteRow> = Vec::new();
    let mut run_variant = |label: &str, edit: &dyn Fn(&mut engine::ExperimentConfig)| -> Result<()> {
        let mut finals = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let mut cfg = base_cfg.clone();
            cfg.seed = seed;
            edit(&mut cfg);
            let report = engine::run_experiment(&cfg, task, None)?;
            finals.push(report.best.p);
        }
        rows.push(summarize(label, &finals));
        Ok(())
    };

    match suite {
        SuiteKind::Fig2 => {
            run_variant("pbt", &|_| {})?;
            run_variant("exploit-only", &|c| c.explore = ExploreConfig::None)?;
            run_variant("explore-only", &|c| c.exploit = ExploitConfig::None)?;
            run_variant("grid", &|c| {
                c.exploit = ExploitConfig::None;
                c.explore = ExploreConfig::None;
            })?;
        }
        SuiteKind::Ablations => {
            run_variant("pbt", &|_| {})?;
            run_variant("hyperparams-only", &|c| {
                c.exploit_mask = crate::core::ExploitMask::HyperparamsOnly
            })?;
            run_variant("weights-only", &|c| {
                c.exploit_mask = crate::core::ExploitMask::WeightsOnly
            })?;
            // replay: a fresh population trained from scratch with h frozen
            // at each PBT member's final value
            let mut finals = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let mut cfg = base_cfg.clone();
                cfg.seed = seed;
                let runs =
                    engine::run_ablation(&cfg, task, engine::AblationVariant::FinalHReplay)?;
                let replay = &runs
                    .iter()
                    .find(|(label, _)| label == "final-h-replay")
                    .expect("replay variant always present")
                    .1;
                finals.push(replay.best.p);
            }
            rows.push(summarize("final-h-replay", &finals));
        }
        SuiteKind::Popsize => {
            for &n in &resolved.suite.population_sizes {
                run_variant(&format!("N={n}"), &|c| {
                    c.population_size = n;
                    c.initial_h = None;
                })?;
            }
        }
    }

    let mut csv = String::from("variant,seeds,median_final_best,q25,q75\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.variant, row.seeds, row.median, row.q25, row.q75
        ));
        println!(
            "{:<20} median {:>10.5}   [q25 {:>10.5}, q75 {:>10.5}]   ({} seeds)",
            row.variant, row.median, row.q25, row.q75, row.seeds
        );
    }
    fs::write(dir.join("summary.csv"), csv)?;
    Ok(rows)
}

fn summarize(variant: &str, finals: &[f64]) -> SuiteRow {
    let mut xs = finals.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("scores are never NaN"));
    let n = xs.len();
    SuiteRow {
        variant: variant.to_string(),
        seeds: n,
        median: median_sorted(&xs),
        q25: xs[(n / 4).min(n - 1)],
        q75: xs[((3 * n) / 4).min(n - 1)],
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Post-process an existing run directory: phylogeny.dot, lineages.csv and
/// curves_top_k.csv from events.jsonl and final_population.json.
pub fn cmd_analyze(run_dir: &Path, top_k: usize) -> Result<()> {
    let events = read_events(&run_dir.join("events.jsonl"))?;
    let population: Vec<MemberState> = serde_json::from_str(
        &fs::read_to_string(run_dir.join("final_population.json"))
            .context("run directory has no final_population.json")?,
    )?;
    let ids: Vec<usize> = population.iter().map(|m| m.id).collect();

    let phylo = analysis::build_phylogeny(&events)?;
    fs::write(run_dir.join("phylogeny.dot"), phylo.to_dot())?;

    let lineages = analysis::extract_lineages(&events, &ids)?;
    fs::write(run_dir.join("lineages.csv"), analysis::lineages_to_csv(&lineages))?;

    let curves = engine::curves_from_events(&events);
    let table = analysis::aggregate_curve_points(&curves, &ids, top_k.min(ids.len().max(1)))?;
    fs::write(run_dir.join("curves_top_k.csv"), table.to_csv())?;

    println!(
        "analyzed {}: {} events, {} lineage(s), {} roots among final members",
        run_dir.display(),
        events.len(),
        lineages.len(),
        phylo.final_root_count()
    );
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<LineageEvent>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read event log {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("malformed event log line"))
        .collect()
}
