//! The exploit and explore strategy catalogue.
//!
//! All strategies are pure functions of (inputs, rng stream): the caller owns
//! the per-member RNG, so the same seed always yields the same decision.
//! Uniform sampling of "another member" always excludes the caller.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{HyperValue, HyperparamSpec, HyperparamVector, MemberId, MemberState, Prior};
use crate::stats::welch_t;

/// Exploit selection strategy and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExploitConfig {
    /// Never exploit.
    None,
    /// Uniformly sample another member and copy it iff its eval window beats
    /// ours under a one-sided Welch's t-test at significance `alpha`.
    TTest { alpha: f64 },
    /// If we rank in the bottom `fraction` of the population by p, copy a
    /// uniform sample from the top `fraction`.
    Truncation { fraction: f64 },
    /// Uniformly sample another member and copy it iff its p is strictly
    /// better.
    BinaryTournament,
}

impl Default for ExploitConfig {
    fn default() -> Self {
        ExploitConfig::Truncation { fraction: 0.2 }
    }
}

impl ExploitConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ExploitConfig::TTest { alpha } if !(0.0 < *alpha && *alpha < 1.0) => {
                Err(format!("t-test alpha must be in (0, 1), got {alpha}"))
            }
            ExploitConfig::Truncation { fraction } if !(0.0 < *fraction && *fraction <= 0.5) => {
                Err(format!(
                    "truncation fraction must be in (0, 0.5] so the bottom and top sets \
                     are disjoint, got {fraction}"
                ))
            }
            _ => Ok(()),
        }
    }

    /// Pick an exploit source for `member` from a population snapshot, or
    /// `None` when the strategy declines. `population` must be sorted by id.
    pub fn select<R: Rng>(
        &self,
        member: &MemberState,
        population: &[MemberState],
        rng: &mut R,
    ) -> Option<MemberId> {
        match self {
            ExploitConfig::None => None,
            ExploitConfig::TTest { alpha } => ttest_select(member, population, *alpha, rng),
            ExploitConfig::Truncation { fraction } => {
                truncation_select(member, population, *fraction, rng)
            }
            ExploitConfig::BinaryTournament => binary_tournament(member, population, rng),
        }
    }
}

/// Explore strategy applied to hyperparameters after a successful exploit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExploreConfig {
    /// Keep hyperparameters fixed.
    None,
    /// Multiply each numeric hyperparameter by its up or down factor with
    /// probability 1/2 each; categoricals are re-drawn with probability 1/2.
    #[default]
    Perturb,
    /// Replace each hyperparameter by a fresh prior draw with its
    /// per-hyperparameter resample probability.
    Resample,
    /// Additive Gaussian noise on each numeric hyperparameter, clamped to
    /// [0, 1]: the toy quadratic's "perturb its update direction".
    DirectionNoise { sigma: f64 },
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ExploreConfig::DirectionNoise { sigma } if !sigma.is_finite() || *sigma < 0.0 => {
                Err(format!("direction-noise sigma must be >= 0, got {sigma}"))
            }
            _ => Ok(()),
        }
    }
}

fn sample_other<'a, R: Rng>(
    member: &MemberState,
    population: &'a [MemberState],
    rng: &mut R,
) -> Option<&'a MemberState> {
    let others: Vec<&MemberState> = population.iter().filter(|m| m.id != member.id).collect();
    if others.is_empty() {
        return None;
    }
    Some(others[rng.gen_range(0..others.len())])
}

/// T-test selection: uniformly sample another member; return it iff its eval
/// window has a higher mean than ours and the one-sided Welch test passes at
/// `alpha`. Windows shorter than 2 entries make this a no-op.
pub fn ttest_select<R: Rng>(
    member: &MemberState,
    population: &[MemberState],
    alpha: f64,
    rng: &mut R,
) -> Option<MemberId> {
    let candidate = sample_other(member, population, rng)?;
    if member.window.len() < 2 || candidate.window.len() < 2 {
        return None;
    }
    let ours: Vec<f64> = member.window.scores().collect();
    let theirs: Vec<f64> = candidate.window.scores().collect();
    let result = welch_t(&ours, &theirs).ok()?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    if mean(&theirs) > mean(&ours) && result.p_one_sided < alpha {
        Some(candidate.id)
    } else {
        None
    }
}

/// Rank the population by p descending (ties by lowest id first) and split
/// off the top and bottom `ceil(fraction·N)` members.
fn rank_split(population: &[MemberState], fraction: f64) -> (Vec<&MemberState>, Vec<&MemberState>) {
    let mut ranked: Vec<&MemberState> = population.iter().collect();
    ranked.sort_by(|a, b| {
        b.p.partial_cmp(&a.p)
            .expect("scores are never NaN")
            .then(a.id.cmp(&b.id))
    });
    let k = ((fraction * ranked.len() as f64).ceil() as usize).max(1);
    let top = ranked[..k].to_vec();
    let bottom = ranked[ranked.len() - k..].to_vec();
    (top, bottom)
}

/// Truncation selection: if we are in the bottom `fraction` of the ranking,
/// copy a uniform sample from the top `fraction` (excluding ourselves and
/// members that have never evaluated).
pub fn truncation_select<R: Rng>(
    member: &MemberState,
    population: &[MemberState],
    fraction: f64,
    rng: &mut R,
) -> Option<MemberId> {
    if population.len() < 2 {
        return None;
    }
    let (top, bottom) = rank_split(population, fraction);
    if !bottom.iter().any(|m| m.id == member.id) {
        return None;
    }
    let sources: Vec<&&MemberState> = top
        .iter()
        .filter(|m| m.id != member.id && m.has_eval())
        .collect();
    if sources.is_empty() {
        return None;
    }
    Some(sources[rng.gen_range(0..sources.len())].id)
}

/// Binary tournament: uniformly sample another member; copy it iff its score
/// is strictly better.
pub fn binary_tournament<R: Rng>(
    member: &MemberState,
    population: &[MemberState],
    rng: &mut R,
) -> Option<MemberId> {
    let other = sample_other(member, population, rng)?;
    (other.p > member.p).then_some(other.id)
}

fn round_integer(value: f64, lo: f64) -> f64 {
    value.round().max(lo)
}

fn clamp_to(value: f64, prior: &Prior) -> f64 {
    match prior.bounds() {
        Some((lo, hi)) => value.clamp(lo, hi),
        None => value,
    }
}

fn spec_for<'a>(specs: &'a [HyperparamSpec], name: &str) -> &'a HyperparamSpec {
    specs
        .iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("hyperparameter {name:?} has no spec"))
}

/// Perturb: each numeric hyperparameter is independently multiplied by its
/// up or down factor with probability 1/2; categorical entries are re-drawn
/// from their choice list with probability 1/2. Integer-valued entries are
/// perturbed in real space, then rounded (never below the prior's lower
/// bound); bounded entries are clamped back into the prior when the spec asks
/// for it.
pub fn perturb<R: Rng>(
    h: &HyperparamVector,
    specs: &[HyperparamSpec],
    rng: &mut R,
) -> HyperparamVector {
    let mut out = h.clone();
    for (name, value) in h.iter() {
        let spec = spec_for(specs, name);
        match (&spec.prior, value) {
            (Prior::Categorical { choices }, _) => {
                if rng.gen_bool(0.5) {
                    out.set(name.clone(), choices[rng.gen_range(0..choices.len())].clone());
                }
            }
            (prior, HyperValue::Num(v)) => {
                let (up, down) = spec.perturb_factors;
                let factor = if rng.gen_bool(0.5) { up } else { down };
                let mut next = v * factor;
                if spec.integer {
                    let lo = prior.bounds().map_or(f64::NEG_INFINITY, |(lo, _)| lo);
                    next = round_integer(next, lo);
                }
                if spec.clamp_to_prior {
                    next = clamp_to(next, prior);
                }
                out.set(name.clone(), HyperValue::Num(next));
            }
            (_, HyperValue::Cat(tok)) => {
                panic!("hyperparameter {name:?} holds token {tok:?} under a numeric prior")
            }
        }
    }
    out
}

/// Resample: each hyperparameter is independently replaced, with its
/// spec's resample probability, by a fresh draw from its prior.
pub fn resample<R: Rng>(
    h: &HyperparamVector,
    specs: &[HyperparamSpec],
    rng: &mut R,
) -> HyperparamVector {
    let mut out = h.clone();
    for (name, _) in h.iter() {
        let spec = spec_for(specs, name);
        if spec.resample_prob > 0.0 && rng.gen_bool(spec.resample_prob) {
            out.set(name.clone(), sample_prior(spec, rng));
        }
    }
    out
}

/// Draw one value from a hyperparameter's prior.
pub fn sample_prior<R: Rng>(spec: &HyperparamSpec, rng: &mut R) -> HyperValue {
    let draw = match &spec.prior {
        Prior::LogUniform { lo, hi } => {
            if lo == hi {
                *lo
            } else {
                rng.gen_range(lo.ln()..hi.ln()).exp()
            }
        }
        Prior::Uniform { lo, hi } => {
            if lo == hi {
                *lo
            } else {
                rng.gen_range(*lo..*hi)
            }
        }
        Prior::Categorical { choices } => {
            return choices[rng.gen_range(0..choices.len())].clone();
        }
    };
    let mut v = draw;
    if spec.integer {
        let lo = spec.prior.bounds().map_or(f64::NEG_INFINITY, |(lo, _)| lo);
        v = round_integer(v, lo);
    }
    HyperValue::Num(clamp_to(v, &spec.prior))
}

/// Sample a full hyperparameter vector from the given specs.
pub fn sample_initial<R: Rng>(specs: &[HyperparamSpec], rng: &mut R) -> HyperparamVector {
    HyperparamVector::from_pairs(specs.iter().map(|s| (s.name.clone(), sample_prior(s, rng))))
}
