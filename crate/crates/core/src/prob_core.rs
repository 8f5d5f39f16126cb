//! Finite probability spaces with the full powerset σ-field, measurable maps
//! between them, and conditional expectation along null-preserving maps.
//!
//! On a finite powerset space every event is a finite union of singletons, so
//! pushforwards, null-preservation and the defining integral identity of the
//! conditional expectation are all checked outcome by outcome.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Tolerance for total-mass checks and for deciding that a weight is null.
pub const EPS_MASS: f64 = 1e-9;
/// Tolerance for pointwise identity checks.
pub const EPS_EQ: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("negative weight {weight} on outcome {outcome}")]
    NegativeWeight { outcome: String, weight: f64 },
    #[error("weights sum to {total}, not 1")]
    MassNotOne { total: f64 },
    #[error("outcome {0} listed twice")]
    DuplicateOutcome(String),
    #[error("map sends {source_outcome} to {image}, which is not an outcome of the target space")]
    NotTotal { source_outcome: String, image: String },
    #[error("map is not null-preserving: target outcome {witness} is null but receives mass {mass}")]
    NotNullPreserving { witness: String, mass: f64 },
    #[error("random variable lives on a different space than the morphism source")]
    SpaceMismatch,
    #[error("morphisms are not composable")]
    NotComposable,
    #[error("random variable has {got} values for {expected} outcomes")]
    LengthMismatch { expected: usize, got: usize },
}

/// A finite probability space. Outcomes are kept sorted and unique.
#[derive(Clone, PartialEq)]
pub struct FinProbSpace<K> {
    outcomes: Vec<K>,
    weights: Vec<f64>,
}

impl<K: Ord + Clone + fmt::Debug> FinProbSpace<K> {
    pub fn new(entries: impl IntoIterator<Item = (K, f64)>) -> Result<Self, ProbError> {
        let mut entries: Vec<(K, f64)> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(ProbError::DuplicateOutcome(format!("{:?}", pair[0].0)));
            }
        }
        let (outcomes, weights) = entries.into_iter().unzip();
        Self::from_sorted(outcomes, weights)
    }

    /// Builds a space from outcomes already in ascending order.
    pub fn from_sorted(outcomes: Vec<K>, weights: Vec<f64>) -> Result<Self, ProbError> {
        if outcomes.len() != weights.len() {
            return Err(ProbError::LengthMismatch {
                expected: outcomes.len(),
                got: weights.len(),
            });
        }
        debug_assert!(outcomes.windows(2).all(|w| w[0] < w[1]));
        let mut total = 0.0;
        for (k, &w) in outcomes.iter().zip(&weights) {
            if !(w >= 0.0) {
                return Err(ProbError::NegativeWeight {
                    outcome: format!("{k:?}"),
                    weight: w,
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > EPS_MASS {
            return Err(ProbError::MassNotOne { total });
        }
        Ok(Self { outcomes, weights })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[K] {
        &self.outcomes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index_of(&self, outcome: &K) -> Option<usize> {
        self.outcomes.binary_search(outcome).ok()
    }

    /// Weight of an outcome; `None` if it is not part of the space.
    pub fn weight(&self, outcome: &K) -> Option<f64> {
        self.index_of(outcome).map(|i| self.weights[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> + '_ {
        self.outcomes.iter().zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn same_as(&self, other: &Self) -> bool {
        std::ptr::eq(self, other) || self.outcomes == other.outcomes
    }
}

impl<K: fmt::Debug> fmt::Debug for FinProbSpace<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.outcomes.iter().zip(self.weights.iter()))
            .finish()
    }
}

/// A total map between the outcome sets of two finite spaces.
#[derive(Clone, Debug)]
pub struct ProbMorphism<K> {
    source: Arc<FinProbSpace<K>>,
    target: Arc<FinProbSpace<K>>,
    map: Vec<usize>,
}

/// Outcome of a null-preservation test.
#[derive(Debug, Clone, PartialEq)]
pub struct NullCheck<K> {
    pub holds: bool,
    /// Target outcome that is null but has positive pulled-back mass.
    pub witness: Option<K>,
    pub witness_mass: f64,
}

impl<K: Ord + Clone + fmt::Debug> ProbMorphism<K> {
    pub fn new(
        source: Arc<FinProbSpace<K>>,
        target: Arc<FinProbSpace<K>>,
        f: impl Fn(&K) -> K,
    ) -> Result<Self, ProbError> {
        let mut map = Vec::with_capacity(source.len());
        for k in source.outcomes() {
            let image = f(k);
            let j = target.index_of(&image).ok_or_else(|| ProbError::NotTotal {
                source_outcome: format!("{k:?}"),
                image: format!("{image:?}"),
            })?;
            map.push(j);
        }
        Ok(Self { source, target, map })
    }

    pub fn identity(space: Arc<FinProbSpace<K>>) -> Self {
        let map = (0..space.len()).collect();
        Self {
            source: space.clone(),
            target: space,
            map,
        }
    }

    pub fn source(&self) -> &Arc<FinProbSpace<K>> {
        &self.source
    }

    pub fn target(&self) -> &Arc<FinProbSpace<K>> {
        &self.target
    }

    /// Target index of the source outcome at `source_index`.
    pub fn image_index(&self, source_index: usize) -> usize {
        self.map[source_index]
    }

    pub fn apply(&self, outcome: &K) -> Option<&K> {
        self.source
            .index_of(outcome)
            .map(|i| &self.target.outcomes()[self.map[i]])
    }

    /// Source outcomes mapped onto the target outcome `target_index`.
    pub fn fiber(&self, target_index: usize) -> Vec<&K> {
        self.map
            .iter()
            .enumerate()
            .filter(|(_, &j)| j == target_index)
            .map(|(i, _)| &self.source.outcomes()[i])
            .collect()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &ProbMorphism<K>) -> Result<Self, ProbError> {
        if !inner.target.same_as(&self.source) {
            return Err(ProbError::NotComposable);
        }
        Ok(Self {
            source: inner.source.clone(),
            target: self.target.clone(),
            map: inner.map.iter().map(|&j| self.map[j]).collect(),
        })
    }

    /// Image measure of the source weights, indexed like the target outcomes.
    pub fn pushforward(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.target.len()];
        for (i, &j) in self.map.iter().enumerate() {
            mass[j] += self.source.weights()[i];
        }
        mass
    }

    /// Checks `P_source ∘ f^-1 ≪ P_target` on singletons.
    pub fn is_null_preserving(&self, eps: f64) -> NullCheck<K> {
        let mass = self.pushforward();
        for (j, (&pulled, &w)) in mass.iter().zip(self.target.weights()).enumerate() {
            if w <= eps && pulled > eps {
                return NullCheck {
                    holds: false,
                    witness: Some(self.target.outcomes()[j].clone()),
                    witness_mass: pulled,
                };
            }
        }
        NullCheck {
            holds: true,
            witness: None,
            witness_mass: 0.0,
        }
    }
}

/// A real-valued function on the outcomes of a space.
#[derive(Clone, Debug)]
pub struct RandomVariable<K> {
    space: Arc<FinProbSpace<K>>,
    values: Vec<f64>,
}

impl<K: Ord + Clone + fmt::Debug> RandomVariable<K> {
    pub fn new(space: Arc<FinProbSpace<K>>, values: Vec<f64>) -> Result<Self, ProbError> {
        if values.len() != space.len() {
            return Err(ProbError::LengthMismatch {
                expected: space.len(),
                got: values.len(),
            });
        }
        Ok(Self { space, values })
    }

    pub fn from_fn(space: Arc<FinProbSpace<K>>, f: impl Fn(&K) -> f64) -> Self {
        let values = space.outcomes().iter().map(f).collect();
        Self { space, values }
    }

    pub fn constant(space: Arc<FinProbSpace<K>>, c: f64) -> Self {
        let values = vec![c; space.len()];
        Self { space, values }
    }

    pub fn space(&self) -> &Arc<FinProbSpace<K>> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, outcome: &K) -> Option<f64> {
        self.space.index_of(outcome).map(|i| self.values[i])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            space: self.space.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self, ProbError> {
        if !self.space.same_as(&other.space) {
            return Err(ProbError::SpaceMismatch);
        }
        Ok(Self {
            space: self.space.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }
}

/// `Σ X(ω) P(ω)`.
pub fn expectation<K>(x: &RandomVariable<K>) -> f64 {
    x.values.iter().zip(x.space.weights.iter()).map(|(v, w)| v * w).sum()
}

/// Conditional expectation of `x` along `m`: on every target outcome of
/// positive weight, the fiber-weighted average of `x`. Null target outcomes
/// get the value 0.
pub fn conditional_expectation<K: Ord + Clone + fmt::Debug>(
    x: &RandomVariable<K>,
    m: &ProbMorphism<K>,
) -> Result<RandomVariable<K>, ProbError> {
    if !x.space.same_as(&m.source) {
        return Err(ProbError::SpaceMismatch);
    }
    let check = m.is_null_preserving(EPS_MASS);
    if !check.holds {
        return Err(ProbError::NotNullPreserving {
            witness: format!("{:?}", check.witness.expect("witness on failure")),
            mass: check.witness_mass,
        });
    }
    let mut acc = vec![0.0; m.target.len()];
    for (i, &j) in m.map.iter().enumerate() {
        acc[j] += x.values[i] * m.source.weights[i];
    }
    let values = acc
        .into_iter()
        .zip(m.target.weights.iter())
        .map(|(num, &w)| if w > EPS_MASS { num / w } else { 0.0 })
        .collect();
    Ok(RandomVariable {
        space: m.target.clone(),
        values,
    })
}
