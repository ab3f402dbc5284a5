//! Declarative experiment configs: a single TOML format mirroring the
//! engine's `ExperimentConfig` plus task selection, task constants, output
//! directory and suite definitions. Unknown keys are rejected; every
//! diagnostic names the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{ExploitMask, HyperValue, HyperparamSpec, HyperparamVector, Prior};
use crate::engine::{ExecMode, ExperimentConfig};
use crate::strategies::{ExploitConfig, ExploreConfig};
use crate::tasks::{LogisticParams, LogisticRegressionTask, NoisyQuadraticTask, QuadraticTask, Task};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// The on-disk config. `resolved()` fills every default in place so the
/// echoed resolved_config.toml round-trips to an identical experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub exploit: ExploitSection,
    #[serde(default)]
    pub explore: ExploreSection,
    pub task: TaskSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hyperparams: Vec<HyperparamOverride>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub suite: SuiteSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub population_size: usize,
    pub total_steps: u64,
    #[serde(default = "default_one")]
    pub ready_interval: u64,
    #[serde(default = "default_one")]
    pub eval_every: u64,
    #[serde(default = "default_window")]
    pub eval_window: usize,
    #[serde(default = "default_mode")]
    pub mode: ExecMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mask")]
    pub exploit_mask: ExploitMask,
}

fn default_one() -> u64 {
    1
}
fn default_window() -> usize {
    10
}
fn default_mode() -> ExecMode {
    ExecMode::Serial
}
fn default_mask() -> ExploitMask {
    ExploitMask::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploitSection {
    pub kind: String,
    /// Truncation selection only.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// T-test selection only (one-sided).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_fraction() -> f64 {
    0.2
}
fn default_alpha() -> f64 {
    0.05
}

impl Default for ExploitSection {
    fn default() -> Self {
        Self {
            kind: "truncation".into(),
            fraction: default_fraction(),
            alpha: default_alpha(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreSection {
    pub kind: String,
    /// Experiment-level perturb factors, merged into every hyperparameter
    /// spec unless a [[hyperparams]] block overrides them.
    #[serde(default = "default_factors")]
    pub factors: (f64, f64),
    #[serde(default = "default_resample_prob")]
    pub resample_prob: f64,
    /// Direction-noise only.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_factors() -> (f64, f64) {
    (1.2, 0.8)
}
fn default_resample_prob() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    0.1
}

impl Default for ExploreSection {
    fn default() -> Self {
        Self {
            kind: "perturb".into(),
            factors: default_factors(),
            resample_prob: default_resample_prob(),
            sigma: default_sigma(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: String,
    // quadratic
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    // noisy-quadratic
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvatures: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    // logistic-regression
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_val: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    /// Explicit initial hyperparameters, one table per member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<BTreeMap<String, HyperValue>>>,
    /// Cross-product grid: per-hyperparameter value lists, expanded in
    /// sorted-name order with the last name varying fastest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<BTreeMap<String, Vec<HyperValue>>>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

fn default_replicas() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamOverride {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_factors: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_to_prior: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integer: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_population_sizes")]
    pub population_sizes: Vec<usize>,
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}
fn default_population_sizes() -> Vec<usize> {
    vec![10, 20, 40, 80]
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            population_sizes: default_population_sizes(),
        }
    }
}

/// A parsed, validated config together with its buildable pieces.
pub struct Resolved {
    pub file: ConfigFile,
    pub experiment: ExperimentConfig,
    pub task: Box<dyn Task>,
    pub out_dir: Option<PathBuf>,
    pub suite: SuiteSection,
}

impl std::fmt::Debug for Resolved {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolved")
            .field("experiment", &self.experiment)
            .field("task", &self.task.name())
            .field("out_dir", &self.out_dir)
            .finish_non_exhaustive()
    }
}

pub fn parse_config(path: &Path) -> Result<Resolved, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Resolved, ConfigError> {
    let file: ConfigFile = toml::from_str(text)?;
    resolve(file)
}

pub fn resolve(file: ConfigFile) -> Result<Resolved, ConfigError> {
    let task = build_task(&file.task)?;
    let exploit = build_exploit(&file.exploit)?;
    let explore = build_explore(&file.explore)?;
    let specs = resolve_specs(&file, task.as_ref())?;
    let initial_h = build_initial_h(&file, &specs)?;

    let e = &file.experiment;
    let experiment = ExperimentConfig {
        population_size: e.population_size,
        total_steps: e.total_steps,
        ready_interval: e.ready_interval,
        eval_every: e.eval_every,
        eval_window: e.eval_window,
        exploit,
        explore,
        exploit_mask: e.exploit_mask,
        mode: e.mode,
        quantum: e.quantum,
        seed: e.seed,
        initial_h,
        hyperparam_specs: Some(specs),
    };
    experiment
        .validate()
        .map_err(|err| invalid("experiment", err.to_string()))?;

    Ok(Resolved {
        out_dir: file.output.dir.clone(),
        suite: file.suite.clone(),
        file,
        experiment,
        task,
    })
}

fn build_task(section: &TaskSection) -> Result<Box<dyn Task>, ConfigError> {
    let reject = |field: &str, set: bool| -> Result<(), ConfigError> {
        if set {
            Err(invalid(
                &format!("task.{field}"),
                format!("not a constant of task `{}`", section.kind),
            ))
        } else {
            Ok(())
        }
    };
    match section.kind.as_str() {
        "quadratic" => {
            reject("curvatures", section.curvatures.is_some())?;
            reject("noise", section.noise.is_some())?;
            reject("data_seed", section.data_seed.is_some())?;
            reject("dim", section.dim.is_some())?;
            reject("n_train", section.n_train.is_some())?;
            reject("n_val", section.n_val.is_some())?;
            reject("separation", section.separation.is_some())?;
            reject("batch", section.batch.is_some())?;
            let lr = section.lr.unwrap_or(0.01);
            if lr <= 0.0 {
                return Err(invalid("task.lr", "learning rate must be positive"));
            }
            Ok(Box::new(QuadraticTask::new(lr)))
        }
        "noisy-quadratic" => {
            reject("lr", section.lr.is_some())?;
            reject("data_seed", section.data_seed.is_some())?;
            reject("dim", section.dim.is_some())?;
            reject("n_train", section.n_train.is_some())?;
            reject("n_val", section.n_val.is_some())?;
            reject("separation", section.separation.is_some())?;
            reject("batch", section.batch.is_some())?;
            let curvatures = section
                .curvatures
                .clone()
                .unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
            if curvatures.iter().any(|l| *l <= 0.0) {
                return Err(invalid("task.curvatures", "curvatures must be positive"));
            }
            let noise = section.noise.unwrap_or(0.1);
            if noise < 0.0 {
                return Err(invalid("task.noise", "noise level must be >= 0"));
            }
            Ok(Box::new(NoisyQuadraticTask::new(curvatures, noise)))
        }
        "logistic-regression" => {
            reject("lr", section.lr.is_some())?;
            reject("curvatures", section.curvatures.is_some())?;
            reject("noise", section.noise.is_some())?;
            let defaults = LogisticParams::default();
            let params = LogisticParams {
                data_seed: section.data_seed.unwrap_or(defaults.data_seed),
                dim: section.dim.unwrap_or(defaults.dim),
                n_train: section.n_train.unwrap_or(defaults.n_train),
                n_val: section.n_val.unwrap_or(defaults.n_val),
                separation: section.separation.unwrap_or(defaults.separation),
                batch: section.batch.unwrap_or(defaults.batch),
                ..defaults
            };
            if params.dim == 0 || params.n_train == 0 || params.n_val == 0 || params.batch == 0 {
                return Err(invalid("task", "dataset dimensions must be positive"));
            }
            Ok(Box::new(LogisticRegressionTask::new(params)))
        }
        other => Err(invalid("task.kind", format!("unknown task `{other}`"))),
    }
}

fn build_exploit(section: &ExploitSection) -> Result<ExploitConfig, ConfigError> {
    let cfg = match section.kind.as_str() {
        "none" => ExploitConfig::None,
        "t-test" => ExploitConfig::TTest { alpha: section.alpha },
        "truncation" => ExploitConfig::Truncation {
            fraction: section.fraction,
        },
        "binary-tournament" => ExploitConfig::BinaryTournament,
        other => {
            return Err(invalid(
                "exploit.kind",
                format!("unknown exploit strategy `{other}`"),
            ))
        }
    };
    cfg.validate()
        .map_err(|m| invalid("exploit.fraction", m))?;
    Ok(cfg)
}

fn build_explore(section: &ExploreSection) -> Result<ExploreConfig, ConfigError> {
    let cfg = match section.kind.as_str() {
        "none" => ExploreConfig::None,
        "perturb" => ExploreConfig::Perturb,
        "resample" => ExploreConfig::Resample,
        "direction-noise" => ExploreConfig::DirectionNoise {
            sigma: section.sigma,
        },
        other => {
            return Err(invalid(
                "explore.kind",
                format!("unknown explore strategy `{other}`"),
            ))
        }
    };
    cfg.validate().map_err(|m| invalid("explore.sigma", m))?;
    let (up, down) = section.factors;
    if !(up >= down && down > 0.0) {
        return Err(invalid(
            "explore.factors",
            format!("factors must satisfy up >= down > 0, got ({up}, {down})"),
        ));
    }
    if !(0.0..=1.0).contains(&section.resample_prob) {
        return Err(invalid(
            "explore.resample_prob",
            "must be a probability in [0, 1]",
        ));
    }
    Ok(cfg)
}

/// Task defaults, overlaid with the experiment-level explore factors and
/// resample probability, then with any [[hyperparams]] blocks.
fn resolve_specs(file: &ConfigFile, task: &dyn Task) -> Result<Vec<HyperparamSpec>, ConfigError> {
    let mut specs = task.hyperparam_specs().to_vec();
    for spec in &mut specs {
        spec.perturb_factors = file.explore.factors;
        spec.resample_prob = file.explore.resample_prob;
    }
    let mut seen = std::collections::BTreeSet::new();
    for over in &file.hyperparams {
        if !seen.insert(&over.name) {
            return Err(invalid(
                "hyperparams.name",
                format!("duplicate hyperparameter `{}`", over.name),
            ));
        }
        let spec = specs
            .iter_mut()
            .find(|s| s.name == over.name)
            .ok_or_else(|| {
                invalid(
                    "hyperparams.name",
                    format!(
                        "`{}` is not a hyperparameter of task `{}`",
                        over.name,
                        task.name()
                    ),
                )
            })?;
        if let Some(prior) = &over.prior {
            spec.prior = prior.clone();
        }
        if let Some(f) = over.perturb_factors {
            spec.perturb_factors = f;
        }
        if let Some(p) = over.resample_prob {
            spec.resample_prob = p;
        }
        if let Some(c) = over.clamp_to_prior {
            spec.clamp_to_prior = c;
        }
        if let Some(i) = over.integer {
            spec.integer = i;
        }
    }
    for spec in &specs {
        spec.validate()
            .map_err(|e| invalid(&format!("hyperparams.{}", spec.name), e.to_string()))?;
    }
    Ok(specs)
}

fn build_initial_h(
    file: &ConfigFile,
    specs: &[HyperparamSpec],
) -> Result<Option<Vec<HyperparamVector>>, ConfigError> {
    let Some(init) = &file.init else {
        return Ok(None);
    };
    if init.h_list.is_some() && init.grid.is_some() {
        return Err(invalid("init", "set either h_list or grid, not both"));
    }
    let vectors: Vec<HyperparamVector> = if let Some(list) = &init.h_list {
        list.iter()
            .map(|m| HyperparamVector::new(m.clone()))
            .collect()
    } else if let Some(grid) = &init.grid {
        let names: Vec<&String> = grid.keys().collect();
        let lists: Vec<&Vec<HyperValue>> = grid.values().collect();
        if lists.iter().any(|l| l.is_empty()) {
            return Err(invalid("init.grid", "every value list must be non-empty"));
        }
        let mut combos: Vec<HyperparamVector> = vec![HyperparamVector::default()];
        for (name, values) in names.iter().zip(&lists) {
            let mut next = Vec::with_capacity(combos.len() * values.len());
            for combo in &combos {
                for v in *values {
                    let mut c = combo.clone();
                    c.set((*name).clone(), v.clone());
                    next.push(c);
                }
            }
            combos = next;
        }
        let mut out = Vec::with_capacity(combos.len() * init.replicas);
        for combo in combos {
            for _ in 0..init.replicas.max(1) {
                out.push(combo.clone());
            }
        }
        out
    } else {
        return Err(invalid("init", "set h_list or grid"));
    };

    let mut expected: Vec<&String> = specs.iter().map(|s| &s.name).collect();
    expected.sort();
    for (i, v) in vectors.iter().enumerate() {
        let mut names: Vec<&String> = v.names().collect();
        names.sort();
        if names != expected {
            return Err(invalid(
                "init",
                format!("member {i} sets {names:?}, expected hyperparameters {expected:?}"),
            ));
        }
    }
    if vectors.len() != file.experiment.population_size {
        return Err(invalid(
            "init",
            format!(
                "{} initial hyperparameter settings for population_size {}",
                vectors.len(),
                file.experiment.population_size
            ),
        ));
    }
    Ok(Some(vectors))
}

/// The config with every default and derived value made explicit, for the
/// resolved_config.toml echo. Parsing the echo yields an identical
/// experiment.
pub fn resolved_file(resolved: &Resolved) -> ConfigFile {
    let mut file = resolved.file.clone();
    file.hyperparams = resolved
        .experiment
        .hyperparam_specs
        .as_ref()
        .expect("resolve always fills specs")
        .iter()
        .map(|s| HyperparamOverride {
            name: s.name.clone(),
            prior: Some(s.prior.clone()),
            perturb_factors: Some(s.perturb_factors),
            resample_prob: Some(s.resample_prob),
            clamp_to_prior: Some(s.clamp_to_prior),
            integer: Some(s.integer),
        })
        .collect();
    file
}

pub fn to_toml(file: &ConfigFile) -> String {
    toml::to_string_pretty(file).expect("configs always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [experiment]
        population_size = 4
        total_steps = 50

        [task]
        kind = "quadratic"
    "#;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let r = parse_config_str(MINIMAL).unwrap();
        assert_eq!(
            r.experiment.exploit,
            ExploitConfig::Truncation { fraction: 0.2 }
        );
        assert_eq!(r.experiment.explore, ExploreConfig::Perturb);
        let specs = r.experiment.hyperparam_specs.as_ref().unwrap();
        assert!(specs.iter().all(|s| s.perturb_factors == (1.2, 0.8)));
        assert_eq!(r.experiment.eval_window, 10);
        assert_eq!(r.experiment.mode, ExecMode::Serial);
        assert_eq!(r.task.name(), "quadratic");
    }

    #[test]
    fn ttest_alpha_default() {
        let text = MINIMAL.replace(
            "[task]",
            "[exploit]\nkind = \"t-test\"\n\n[task]",
        );
        let r = parse_config_str(&text).unwrap();
        assert_eq!(r.experiment.exploit, ExploitConfig::TTest { alpha: 0.05 });
    }

    #[test]
    fn oversized_truncation_fraction_rejected() {
        let text = MINIMAL.replace(
            "[task]",
            "[exploit]\nkind = \"truncation\"\nfraction = 0.7\n\n[task]",
        );
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("exploit.fraction"), "{err}");
    }

    #[test]
    fn duplicate_hyperparameter_rejected() {
        let text = format!(
            "{MINIMAL}\n[[hyperparams]]\nname = \"h0\"\n\n[[hyperparams]]\nname = \"h0\"\n"
        );
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("total_steps = 50", "total_steps = 50\nwhatever = 1");
        assert!(parse_config_str(&text).is_err());
    }

    #[test]
    fn unknown_task_and_strategy_rejected() {
        let text = MINIMAL.replace("quadratic", "frobnicate");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("task.kind"), "{err}");
        let text = MINIMAL.replace("[task]", "[exploit]\nkind = \"best\"\n\n[task]");
        assert!(parse_config_str(&text)
            .unwrap_err()
            .to_string()
            .contains("exploit.kind"));
    }

    #[test]
    fn task_constants_must_match_the_task() {
        let text = MINIMAL.replace("kind = \"quadratic\"", "kind = \"quadratic\"\nnoise = 0.5");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("task.noise"), "{err}");
    }

    #[test]
    fn explicit_h_list_must_match_population_and_names() {
        let text = r#"
            [experiment]
            population_size = 2
            total_steps = 10

            [task]
            kind = "quadratic"

            [init]
            h_list = [ { h0 = 1.0, h1 = 0.0 }, { h0 = 0.0, h1 = 1.0 } ]
        "#;
        let r = parse_config_str(text).unwrap();
        let init = r.experiment.initial_h.unwrap();
        assert_eq!(init[0].num("h0").unwrap(), 1.0);
        assert_eq!(init[1].num("h1").unwrap(), 1.0);

        let bad = text.replace("population_size = 2", "population_size = 3");
        assert!(parse_config_str(&bad).is_err());
        let bad = text.replace("h0 = 1.0, h1 = 0.0", "h0 = 1.0");
        assert!(parse_config_str(&bad).is_err());
    }

    #[test]
    fn grid_cross_product_with_replicas() {
        let text = r#"
            [experiment]
            population_size = 45
            total_steps = 10

            [task]
            kind = "logistic-regression"

            [init]
            replicas = 5
            [init.grid]
            lr = [1e-4, 2e-4, 5e-4]
            l2 = [1e-4, 2e-4, 5e-4]
        "#;
        let r = parse_config_str(text).unwrap();
        let init = r.experiment.initial_h.unwrap();
        assert_eq!(init.len(), 45);
        // 9 distinct settings, each replicated 5 times consecutively
        for chunk in init.chunks(5) {
            assert!(chunk.iter().all(|h| h == &chunk[0]));
        }
        let distinct: std::collections::BTreeSet<String> =
            init.iter().map(|h| format!("{:?}", h)).collect();
        assert_eq!(distinct.len(), 9);
    }

    #[test]
    fn hyperparam_override_changes_prior_and_factors() {
        let text = format!(
            "{MINIMAL}\n[[hyperparams]]\nname = \"h0\"\nperturb_factors = [2.0, 0.5]\nresample_prob = 0.25\nprior = {{ kind = \"log-uniform\", lo = 1e-5, hi = 5e-3 }}\n"
        );
        let r = parse_config_str(&text).unwrap();
        let specs = r.experiment.hyperparam_specs.unwrap();
        let h0 = specs.iter().find(|s| s.name == "h0").unwrap();
        assert_eq!(h0.perturb_factors, (2.0, 0.5));
        assert_eq!(h0.resample_prob, 0.25);
        assert_eq!(h0.prior, Prior::LogUniform { lo: 1e-5, hi: 5e-3 });
        let h1 = specs.iter().find(|s| s.name == "h1").unwrap();
        assert_eq!(h1.perturb_factors, (1.2, 0.8), "untouched spec keeps defaults");
        assert!(parse_config_str(&format!(
            "{MINIMAL}\n[[hyperparams]]\nname = \"nope\"\n"
        ))
        .is_err());
    }

    #[test]
    fn categorical_override_parses_from_toml() {
        let text = format!(
            "{MINIMAL}\n[[hyperparams]]\nname = \"h0\"\nprior = {{ kind = \"categorical\", choices = [5, 6, 7] }}\n"
        );
        let r = parse_config_str(&text).unwrap();
        let specs = r.experiment.hyperparam_specs.unwrap();
        let h0 = specs.iter().find(|s| s.name == "h0").unwrap();
        match &h0.prior {
            Prior::Categorical { choices } => {
                assert_eq!(
                    choices,
                    &vec![
                        HyperValue::Num(5.0),
                        HyperValue::Num(6.0),
                        HyperValue::Num(7.0)
                    ]
                );
            }
            other => panic!("expected categorical prior, got {other:?}"),
        }
        // token choices work too
        let text = format!(
            "{MINIMAL}\n[[hyperparams]]\nname = \"h0\"\nprior = {{ kind = \"categorical\", choices = [\"a\", \"b\"] }}\n"
        );
        assert!(parse_config_str(&text).is_ok());
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
            [experiment]
            population_size = 2
            total_steps = 200
            ready_interval = 4
            seed = 42
            exploit_mask = "weights-only"

            [exploit]
            kind = "truncation"
            fraction = 0.5

            [explore]
            kind = "direction-noise"
            sigma = 0.1

            [task]
            kind = "quadratic"
            lr = 0.01

            [init]
            h_list = [ { h0 = 1.0, h1 = 0.0 }, { h0 = 0.0, h1 = 1.0 } ]
        "#;
        let r = parse_config_str(text).unwrap();
        let echoed = to_toml(&resolved_file(&r));
        let r2 = parse_config_str(&echoed).unwrap();
        assert_eq!(r.experiment, r2.experiment, "echo must round-trip");
    }
}
