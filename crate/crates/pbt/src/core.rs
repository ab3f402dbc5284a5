//! Shared domain types and the elementary predicates of the training loop.
//!
//! Everything here is an immutable value once constructed; mutation happens
//! only through the store. All scores are maximized: tasks whose natural
//! metric is a loss must negate it in `eval`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense member identifier in `0..N`.
pub type MemberId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("non-finite value at index {index}: {value}")]
    NonFiniteParam { index: usize, value: f64 },
    #[error("non-finite eval score: {0}")]
    NonFiniteScore(f64),
    #[error("empty population")]
    EmptyPopulation,
    #[error("hyperparameter {0:?} is not numeric")]
    NotNumeric(String),
    #[error("invalid hyperparameter spec {name:?}: {reason}")]
    InvalidSpec { name: String, reason: String },
}

/// Model parameters θ: a fixed-length vector of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(CoreError::NonFiniteParam { index, value });
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One hyperparameter value: a real number or a categorical token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Num(f64),
    Cat(String),
}

impl HyperValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            HyperValue::Num(v) => Some(*v),
            HyperValue::Cat(_) => None,
        }
    }
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Num(v) => write!(f, "{v}"),
            HyperValue::Cat(s) => write!(f, "{s}"),
        }
    }
}

/// Prior distribution a hyperparameter is initially sampled from (and
/// resampled from by the resample explore strategy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    LogUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
    Categorical { choices: Vec<HyperValue> },
}

impl Prior {
    /// Numeric bounds, if this is a bounded numeric prior.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Prior::LogUniform { lo, hi } | Prior::Uniform { lo, hi } => Some((*lo, *hi)),
            Prior::Categorical { .. } => None,
        }
    }
}

/// Declaration of one named hyperparameter: its prior, perturbation factors,
/// resample probability and bounds behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpec {
    pub name: String,
    pub prior: Prior,
    /// Multiplicative (up, down) factors used by the perturb strategy.
    pub perturb_factors: (f64, f64),
    /// Per-hyperparameter probability of replacement under the resample
    /// strategy.
    pub resample_prob: f64,
    /// Clamp perturbed values back into the prior's bounds.
    pub clamp_to_prior: bool,
    /// Round to the nearest integer (never below the prior's lower bound)
    /// after sampling or perturbing.
    pub integer: bool,
}

impl HyperparamSpec {
    pub fn new(name: impl Into<String>, prior: Prior) -> Result<Self, CoreError> {
        let spec = Self {
            name: name.into(),
            prior,
            perturb_factors: (1.2, 0.8),
            resample_prob: 1.0,
            clamp_to_prior: true,
            integer: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_factors(mut self, up: f64, down: f64) -> Result<Self, CoreError> {
        self.perturb_factors = (up, down);
        self.validate()?;
        Ok(self)
    }

    pub fn with_resample_prob(mut self, p: f64) -> Result<Self, CoreError> {
        self.resample_prob = p;
        self.validate()?;
        Ok(self)
    }

    pub fn integer_valued(mut self) -> Self {
        self.integer = true;
        self
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let fail = |reason: String| CoreError::InvalidSpec {
            name: self.name.clone(),
            reason,
        };
        match &self.prior {
            Prior::LogUniform { lo, hi } => {
                if lo.is_nan() || *lo <= 0.0 {
                    return Err(fail(format!("log-uniform lower bound must be > 0, got {lo}")));
                }
                if hi.is_nan() || lo > hi {
                    return Err(fail(format!("bounds must satisfy lo <= hi, got [{lo}, {hi}]")));
                }
            }
            Prior::Uniform { lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(fail(format!("bounds must satisfy lo <= hi, got [{lo}, {hi}]")));
                }
            }
            Prior::Categorical { choices } => {
                if choices.is_empty() {
                    return Err(fail("categorical prior needs at least one choice".into()));
                }
            }
        }
        let (up, down) = self.perturb_factors;
        if !up.is_finite() || !down.is_finite() || !(up >= down && down > 0.0) {
            return Err(fail(format!(
                "perturb factors must satisfy up >= down > 0, got ({up}, {down})"
            )));
        }
        if !(0.0..=1.0).contains(&self.resample_prob) {
            return Err(fail(format!(
                "resample_prob must be in [0, 1], got {}",
                self.resample_prob
            )));
        }
        Ok(())
    }
}

/// Current values h of the experiment's named hyperparameters.
///
/// Backed by an ordered map so iteration (and every serialized artifact) is
/// deterministic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperparamVector(BTreeMap<String, HyperValue>);

impl HyperparamVector {
    pub fn new(entries: BTreeMap<String, HyperValue>) -> Self {
        Self(entries)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, HyperValue)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    pub fn get(&self, name: &str) -> Option<&HyperValue> {
        self.0.get(name)
    }

    pub fn num(&self, name: &str) -> Result<f64, CoreError> {
        self.get(name)
            .and_then(HyperValue::as_num)
            .ok_or_else(|| CoreError::NotNumeric(name.to_string()))
    }

    pub fn set(&mut self, name: impl Into<String>, value: HyperValue) {
        self.0.insert(name.into(), value);
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &HyperValue)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Rolling window of the most recent eval scores (newest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalWindow {
    capacity: usize,
    scores: VecDeque<f64>,
}

impl EvalWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "eval window capacity must be positive");
        Self {
            capacity,
            scores: VecDeque::with_capacity(capacity),
        }
    }

    /// Push a score, evicting the oldest entry at capacity.
    pub fn push(&mut self, score: f64) {
        self.scores.push_front(score);
        self.scores.truncate(self.capacity);
    }

    pub fn newest(&self) -> Option<f64> {
        self.scores.front().copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Scores newest-first.
    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }
}

/// What an exploit copy transfers from the source checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploitMask {
    /// Weights and hyperparameters.
    All,
    /// Hyperparameters only; weights and ancestry stay.
    HyperparamsOnly,
    /// Weights (and ancestry) only; hyperparameters stay.
    WeightsOnly,
    /// Nothing is ever copied; exploit is disabled.
    None,
}

/// Serialize a score where negative infinity (never evaluated) maps to JSON
/// null.
pub mod score_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(score: &f64, s: S) -> Result<S::Ok, S::Error> {
        if score.is_finite() {
            s.serialize_some(score)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// One population member's full state: the (θ, h, p, t) tuple plus lineage
/// identity and store bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberState {
    pub id: MemberId,
    pub theta: ParamVector,
    pub h: HyperparamVector,
    /// Last eval score, higher is better; −∞ until the first eval so that a
    /// never-evaluated member can never be exploited as a source.
    #[serde(with = "score_serde")]
    pub p: f64,
    /// Step counter, non-decreasing over the member's lifetime.
    pub t: u64,
    pub window: EvalWindow,
    /// Steps since the last exploit-and-explore attempt (or overwrite).
    pub steps_since_event: u64,
    /// The initial member this state's weights descend from.
    pub ancestor_id: MemberId,
    /// Monotone counter incremented on every store write.
    pub version: u64,
}

impl MemberState {
    pub fn new(
        id: MemberId,
        theta: ParamVector,
        h: HyperparamVector,
        window_capacity: usize,
    ) -> Self {
        Self {
            id,
            theta,
            h,
            p: f64::NEG_INFINITY,
            t: 0,
            window: EvalWindow::new(window_capacity),
            steps_since_event: 0,
            ancestor_id: id,
            version: 1,
        }
    }

    /// Record a fresh eval score: the window gains it (evicting the oldest at
    /// capacity), `p` becomes it, and the version is bumped. Everything else
    /// is untouched.
    pub fn record_eval(&self, score: f64) -> Result<MemberState, CoreError> {
        if !score.is_finite() {
            return Err(CoreError::NonFiniteScore(score));
        }
        let mut next = self.clone();
        next.window.push(score);
        next.p = score;
        next.version += 1;
        Ok(next)
    }

    pub fn has_eval(&self) -> bool {
        self.p > f64::NEG_INFINITY
    }
}

/// True iff the member has trained `ready_interval` or more steps since its
/// last exploit-and-explore attempt.
pub fn ready(member: &MemberState, ready_interval: u64) -> bool {
    member.steps_since_event >= ready_interval
}

/// The member with the highest p; ties broken by lowest id so replays are
/// deterministic.
pub fn best(population: &[MemberState]) -> Result<&MemberState, CoreError> {
    population
        .iter()
        .max_by(|a, b| {
            a.p.partial_cmp(&b.p)
                .expect("scores are never NaN")
                .then(b.id.cmp(&a.id))
        })
        .ok_or(CoreError::EmptyPopulation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn member(id: MemberId) -> MemberState {
        MemberState::new(
            id,
            ParamVector::new(vec![0.9, 0.9]).unwrap(),
            HyperparamVector::from_pairs([("lr".to_string(), HyperValue::Num(0.01))]),
            10,
        )
    }

    fn member_with_p(id: MemberId, p: f64) -> MemberState {
        member(id).record_eval(p).unwrap()
    }

    #[test]
    fn ready_at_exact_interval() {
        let mut m = member(0);
        m.steps_since_event = 4;
        assert!(ready(&m, 4));
        m.steps_since_event = 3;
        assert!(!ready(&m, 4));
        m.steps_since_event = 5000;
        assert!(ready(&m, 5000));
    }

    #[test]
    fn ready_is_monotone_in_steps() {
        for interval in [1u64, 4, 17] {
            for s in 0..40u64 {
                let mut m = member(0);
                m.steps_since_event = s;
                if ready(&m, interval) {
                    m.steps_since_event = s + 1;
                    assert!(ready(&m, interval));
                }
            }
        }
    }

    #[test]
    fn record_eval_base_case() {
        let m = member(0);
        assert!(m.window.is_empty());
        let m = m.record_eval(0.5).unwrap();
        assert_eq!(m.window.newest(), Some(0.5));
        assert_eq!(m.window.len(), 1);
        assert_eq!(m.p, 0.5);
    }

    #[test]
    fn record_eval_evicts_oldest_at_capacity() {
        let mut m = member(0);
        for i in 0..10 {
            m = m.record_eval(i as f64).unwrap();
        }
        assert_eq!(m.window.len(), 10);
        m = m.record_eval(1.0).unwrap();
        assert_eq!(m.window.len(), 10);
        assert_eq!(m.p, 1.0);
        // oldest (0.0) evicted
        assert!(!m.window.scores().any(|s| s == 0.0));
    }

    #[test]
    fn record_eval_rejects_non_finite() {
        let m = member(0);
        assert!(matches!(
            m.record_eval(f64::NAN),
            Err(CoreError::NonFiniteScore(_))
        ));
        assert!(m.record_eval(f64::INFINITY).is_err());
    }

    #[test]
    fn record_eval_touches_only_window_p_version() {
        let m = member_with_p(3, 0.25);
        let n = m.record_eval(0.75).unwrap();
        assert_eq!(n.theta, m.theta);
        assert_eq!(n.h, m.h);
        assert_eq!(n.t, m.t);
        assert_eq!(n.ancestor_id, m.ancestor_id);
        assert_eq!(n.version, m.version + 1);
    }

    #[test]
    fn best_unique_max() {
        let pop = vec![member_with_p(0, 0.5), member_with_p(1, 0.9), member_with_p(2, 0.2)];
        assert_eq!(best(&pop).unwrap().id, 1);
    }

    #[test]
    fn best_tie_breaks_by_lowest_id() {
        let pop = vec![member_with_p(0, 0.9), member_with_p(1, 0.9)];
        assert_eq!(best(&pop).unwrap().id, 0);
    }

    #[test]
    fn best_singleton_and_empty() {
        let pop = vec![member_with_p(7, 0.1)];
        assert_eq!(best(&pop).unwrap().id, 7);
        assert_eq!(best(&[]).unwrap_err(), CoreError::EmptyPopulation);
    }

    #[test]
    fn best_ranks_unevaluated_last() {
        let pop = vec![member(0), member_with_p(1, -100.0)];
        assert_eq!(best(&pop).unwrap().id, 1);
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(HyperparamSpec::new("lr", Prior::LogUniform { lo: 0.0, hi: 1.0 }).is_err());
        assert!(HyperparamSpec::new("lr", Prior::Uniform { lo: 2.0, hi: 1.0 }).is_err());
        assert!(HyperparamSpec::new("c", Prior::Categorical { choices: vec![] }).is_err());
        let s = HyperparamSpec::new("lr", Prior::LogUniform { lo: 1e-5, hi: 5e-3 }).unwrap();
        assert!(s.clone().with_factors(0.8, 1.2).is_err());
        assert!(s.with_resample_prob(1.5).is_err());
        let s = HyperparamSpec::new("lr", Prior::LogUniform { lo: 1e-5, hi: 5e-3 }).unwrap();
        assert!(s.with_factors(f64::INFINITY, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn window_never_exceeds_capacity(
            capacity in 1usize..20,
            pushes in proptest::collection::vec(-1e6f64..1e6, 0..200),
        ) {
            let mut w = EvalWindow::new(capacity);
            for s in &pushes {
                w.push(*s);
                prop_assert!(w.len() <= capacity);
            }
            if let Some(last) = pushes.last() {
                prop_assert_eq!(w.newest(), Some(*last));
            }
        }

        #[test]
        fn best_is_permutation_invariant(
            ps in proptest::collection::vec(-1e3f64..1e3, 1..12),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let pop: Vec<_> = ps.iter().enumerate()
                .map(|(i, p)| member_with_p(i, *p))
                .collect();
            let id = best(&pop).unwrap().id;
            let max = pop.iter().map(|m| m.p).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(best(&pop).unwrap().p >= max);
            let mut shuffled = pop.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(best(&shuffled).unwrap().id, id);
        }
    }
}
