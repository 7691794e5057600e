//! Synthetic model collections with controlled accuracies and correlated
//! errors.

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabelVector, PredictionMatrix, Provenance};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_examples: usize,
    pub num_classes: usize,
    /// One target accuracy per model, in (0, 1].
    pub accuracy_targets: Vec<f64>,
    /// Probability that a wrong prediction is the example's shared
    /// consensus wrong class rather than an independent one.
    pub correlation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn num_models(&self) -> usize {
        self.accuracy_targets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_examples == 0 {
            return fail("num_examples must be positive".into());
        }
        if self.num_models() < 2 {
            return fail("at least two models are required".into());
        }
        if self.num_classes < 2 {
            return fail("at least two classes are required".into());
        }
        if let Some(a) = self.accuracy_targets.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return fail(format!("accuracy target {a} outside (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return fail(format!("correlation {} outside [0, 1)", self.correlation));
        }
        Ok(())
    }

    /// Targets at or below chance level.
    pub fn warnings(&self) -> Vec<String> {
        let chance = 1.0 / self.num_classes as f64;
        self.accuracy_targets
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a < chance)
            .map(|(j, a)| format!("model {j}: accuracy target {a} is below chance level {chance:.4}"))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub matrix: PredictionMatrix,
    pub labels: LabelVector,
    pub warnings: Vec<String>,
}

/// Per-model stream keys that depend on the target value (and its
/// occurrence among equal targets) rather than the column position, so
/// permuting the targets permutes the generated columns.
fn model_keys(targets: &[f64]) -> Vec<u64> {
    targets
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let ordinal = targets[..j].iter().filter(|b| b.to_bits() == a.to_bits()).count();
            seed::derive(a.to_bits(), &[tag::MODEL, ordinal as u64])
        })
        .collect()
}

/// Uniform class different from `avoid`.
fn wrong_class(rng: &mut seed::Rng, num_classes: usize, avoid: ClassId) -> ClassId {
    let c = rng.gen_range(0..num_classes as ClassId - 1);
    if c >= avoid {
        c + 1
    } else {
        c
    }
}

pub fn generate_collection(spec: &SyntheticSpec) -> Result<SyntheticCollection> {
    spec.validate()?;
    let warnings = spec.warnings();
    for w in &warnings {
        warn!("{w}");
    }
    let k = spec.num_classes;
    let keys = model_keys(&spec.accuracy_targets);
    let mut labels = Vec::with_capacity(spec.num_examples);
    let mut rows = Vec::with_capacity(spec.num_examples);
    for i in 0..spec.num_examples {
        let mut rng = seed::derived_rng(spec.seed, &[tag::LABEL, i as u64]);
        let y = rng.gen_range(0..k as ClassId);
        let consensus = wrong_class(&mut rng, k, y);
        let row = spec
            .accuracy_targets
            .iter()
            .zip(&keys)
            .map(|(&acc, &key)| {
                let mut rng = seed::derived_rng(spec.seed, &[tag::MODEL, i as u64, key]);
                let (u, v): (f64, f64) = (rng.gen(), rng.gen());
                if u < acc {
                    y
                } else if v < spec.correlation {
                    consensus
                } else {
                    wrong_class(&mut rng, k, y)
                }
            })
            .collect();
        labels.push(y);
        rows.push(row);
    }
    let ids = (0..spec.num_examples).map(|i| format!("x{i}")).collect();
    let names = (1..=spec.num_models()).map(|j| format!("model_{j:03}")).collect();
    let matrix = PredictionMatrix::new(ids, names, rows, Some(k))?;
    let labels = LabelVector::new(labels, Provenance::Oracle, &matrix)?;
    Ok(SyntheticCollection {
        matrix,
        labels,
        warnings,
    })
}

/// A collection under distribution shift where disagreement carries no
/// signal. On every example the m models predict m distinct classes, and at
/// most one of them is right. Model j is the right one with probability
/// proportional to its target (scaled down so the targets sum to at most one).
/// Every row then scores identically under any posterior, so selective
/// sampling has nothing to exploit. Requires K ≥ m + 1.
pub fn drift_collection(spec: &SyntheticSpec) -> Result<SyntheticCollection> {
    spec.validate()?;
    let (m, k) = (spec.num_models(), spec.num_classes);
    if k < m + 1 {
        return Err(Error::Config(format!("drift collection needs at least {} classes for {m} models", m + 1)));
    }
    let scale = spec.accuracy_targets.iter().sum::<f64>().max(1.0);
    let mut labels = Vec::with_capacity(spec.num_examples);
    let mut rows = Vec::with_capacity(spec.num_examples);
    for i in 0..spec.num_examples {
        let mut rng = seed::derived_rng(spec.seed, &[tag::LABEL, i as u64]);
        let y = rng.gen_range(0..k as ClassId);
        let u: f64 = rng.gen::<f64>() * scale;
        let mut acc = 0.0;
        let right = spec.accuracy_targets.iter().position(|&a| {
            acc += a;
            u < acc
        });
        let wrong = rand::seq::index::sample(&mut rng, k - 1, m);
        let row = (0..m)
            .map(|j| {
                if Some(j) == right {
                    y
                } else {
                    let c = wrong.index(j) as ClassId;
                    if c >= y {
                        c + 1
                    } else {
                        c
                    }
                }
            })
            .collect();
        labels.push(y);
        rows.push(row);
    }
    let ids = (0..spec.num_examples).map(|i| format!("x{i}")).collect();
    let names = (1..=m).map(|j| format!("model_{j:03}")).collect();
    let matrix = PredictionMatrix::new(ids, names, rows, Some(k))?;
    let labels = LabelVector::new(labels, Provenance::Oracle, &matrix)?;
    Ok(SyntheticCollection {
        matrix,
        labels,
        warnings: Vec::new(),
    })
}

/// `count` targets drawn uniformly from `[low, high]`.
pub fn uniform_targets(count: usize, low: f64, high: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::derived_rng(seed, &[tag::MODEL]);
    (0..count).map(|_| rng.gen_range(low..=high)).collect()
}
