//! Posterior over "which model is best" under a single-parameter label
//! noise model, and the expected-entropy score used to pick queries.
//!
//! If model `h` is the best model, its prediction on a fresh example is
//! wrong with probability ε. Observing label `y` on example `x` therefore
//! multiplies the weight of model `j` by `1 − ε` when `h_j(x) = y` and by
//! `ε` otherwise. All arithmetic is done on log weights.

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, PredictionMatrix};
use crate::error::{Error, Result};

/// Probability that the best model mispredicts a label.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ErrorRate(f64);

impl ErrorRate {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 && epsilon < 1.0 {
            Ok(Self(epsilon))
        } else {
            Err(Error::InvalidErrorRate(epsilon))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// ε = 0.5 makes every observation uninformative.
    pub fn is_flat(self) -> bool {
        self.0 == 0.5
    }

    /// Values above one half invert the meaning of agreement. They are
    /// allowed for experimentation but never produced by the tuning grid.
    pub fn exceeds_half(self) -> bool {
        self.0 > 0.5
    }

    fn log_correct(self) -> f64 {
        (-self.0).ln_1p()
    }

    fn log_wrong(self) -> f64 {
        self.0.ln()
    }
}

impl TryFrom<f64> for ErrorRate {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ErrorRate> for f64 {
    fn from(e: ErrorRate) -> f64 {
        e.0
    }
}

impl std::fmt::Display for ErrorRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-probability vector over the m candidate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPosterior {
    log_probs: Vec<f64>,
}

impl ModelPosterior {
    pub fn uniform(num_models: usize) -> Result<Self> {
        if num_models < 2 {
            return Err(Error::Invalid(format!("m ≥ 2 required, got {num_models}")));
        }
        Ok(Self {
            log_probs: vec![-(num_models as f64).ln(); num_models],
        })
    }

    /// Normalizes arbitrary log weights.
    pub fn from_log_weights(mut log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() < 2 {
            return Err(Error::Invalid(format!("m ≥ 2 required, got {}", log_weights.len())));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Invalid("log weights must not be NaN or +inf".into()));
        }
        let z = log_sum_exp(&log_weights);
        if !z.is_finite() {
            return Err(Error::Invalid("posterior has no mass".into()));
        }
        for w in &mut log_weights {
            *w -= z;
        }
        Ok(Self { log_probs: log_weights })
    }

    /// Builds a prior from (unnormalized) nonnegative probabilities.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Invalid("prior probabilities must be finite and nonnegative".into()));
        }
        Self::from_log_weights(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn num_models(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn mass(&self, model: usize) -> f64 {
        self.log_probs[model].exp()
    }

    pub fn entropy(&self) -> f64 {
        posterior_entropy(self)
    }
}

#[inline]
fn plogp(log_p: f64) -> f64 {
    let p = log_p.exp();
    if p == 0.0 {
        0.0
    } else {
        p * log_p
    }
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn posterior_entropy(posterior: &ModelPosterior) -> f64 {
    -posterior.log_probs.iter().map(|&l| plogp(l)).sum::<f64>()
}

/// Applies one observation. `correct[j]` says whether model `j` predicted the
/// observed label.
pub fn update_posterior(posterior: &ModelPosterior, correct: &[bool], eps: ErrorRate) -> Result<ModelPosterior> {
    if correct.len() != posterior.num_models() {
        return Err(Error::LengthMismatch {
            expected: posterior.num_models(),
            got: correct.len(),
        });
    }
    let (hit, miss) = (eps.log_correct(), eps.log_wrong());
    let weights = posterior
        .log_probs
        .iter()
        .zip(correct)
        .map(|(&l, &ok)| l + if ok { hit } else { miss })
        .collect();
    ModelPosterior::from_log_weights(weights)
}

/// How the unknown label of a candidate example is distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    /// Every model's vote weighs 1/m.
    Frequency,
    /// Each model's vote weighs its current posterior mass.
    PosteriorWeighted,
    /// The label's predictive distribution under the noise model: class `c`
    /// weighs the normalizer of the hypothetical posterior after observing
    /// `c`, renormalized over the predicted classes.
    #[default]
    Predictive,
}

/// Class weighting with the posterior attached when it is needed.
#[derive(Debug, Clone, Copy)]
pub enum ClassWeighting<'a> {
    Frequency,
    Posterior(&'a ModelPosterior),
}

impl ClassMode {
    pub fn weighting(self, posterior: &ModelPosterior) -> ClassWeighting<'_> {
        match self {
            ClassMode::Frequency => ClassWeighting::Frequency,
            ClassMode::PosteriorWeighted | ClassMode::Predictive => ClassWeighting::Posterior(posterior),
        }
    }
}

/// Sparse distribution over the classes predicted for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    num_classes: usize,
    // Ascending by class; only classes predicted by at least one model.
    support: Vec<(ClassId, f64)>,
}

impl ClassDistribution {
    pub fn prob(&self, class: ClassId) -> f64 {
        self.support
            .binary_search_by_key(&class, |&(c, _)| c)
            .map_or(0.0, |i| self.support[i].1)
    }

    pub fn support(&self) -> &[(ClassId, f64)] {
        &self.support
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Dense length-K vector.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.num_classes];
        for &(c, p) in &self.support {
            dense[c as usize] = p;
        }
        dense
    }

    pub fn entropy(&self) -> f64 {
        -self
            .support
            .iter()
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(_, p)| p * p.ln())
            .sum::<f64>()
    }

    /// Highest minus second-highest class probability; the second is 0 when
    /// only one class is predicted.
    pub fn margin(&self) -> f64 {
        let (mut first, mut second) = (0.0f64, 0.0f64);
        for &(_, p) in &self.support {
            if p > first {
                second = first;
                first = p;
            } else if p > second {
                second = p;
            }
        }
        first - second
    }

    /// The most probable class, smallest id on ties.
    pub fn mode(&self) -> ClassId {
        let mut best = self.support[0];
        for &(c, p) in &self.support[1..] {
            if p > best.1 {
                best = (c, p);
            }
        }
        best.0
    }
}

pub fn class_distribution(
    matrix: &PredictionMatrix,
    example: usize,
    weighting: ClassWeighting<'_>,
) -> Result<ClassDistribution> {
    matrix.check_example(example)?;
    let row = matrix.row(example);
    let mut support: Vec<(ClassId, f64)> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for (j, &c) in row.iter().enumerate() {
        let slot = match support.iter().position(|&(k, _)| k == c) {
            Some(s) => s,
            None => {
                support.push((c, 0.0));
                counts.push(0);
                masses.push(0.0);
                support.len() - 1
            }
        };
        counts[slot] += 1;
        if let ClassWeighting::Posterior(p) = weighting {
            masses[slot] += p.mass(j);
        }
    }
    let m = row.len() as f64;
    match weighting {
        ClassWeighting::Frequency => {
            for (entry, &count) in support.iter_mut().zip(&counts) {
                entry.1 = count as f64 / m;
            }
        }
        ClassWeighting::Posterior(p) => {
            if p.num_models() != row.len() {
                return Err(Error::LengthMismatch {
                    expected: row.len(),
                    got: p.num_models(),
                });
            }
            let total: f64 = masses.iter().sum();
            for (entry, &mass) in support.iter_mut().zip(&masses) {
                entry.1 = mass / total;
            }
        }
    }
    support.sort_unstable_by_key(|&(c, _)| c);
    Ok(ClassDistribution {
        num_classes: matrix.num_classes(),
        support,
    })
}

/// Per-step precomputation shared by every candidate scored against one
/// posterior.
///
/// With `p_j` the posterior, `S_c` the models predicting class `c`,
/// `P = Σ_{S_c} p_j` and `A = Σ_{S_c} p_j ln p_j`, the hypothetical posterior
/// after observing `c` has normalizer `Z = (1−ε)P + ε(1−P)` and entropy
///
/// ```text
/// H_c = ln Z − [(1−ε)A + ε(A_tot − A) + (1−ε)ln(1−ε)P + ε ln ε (1−P)] / Z
/// ```
///
/// so one pass over the m predictions scores a candidate.
#[derive(Debug, Clone)]
pub struct PosteriorSnapshot {
    probs: Vec<f64>,
    plogp: Vec<f64>,
    total: f64,
    total_plogp: f64,
    entropy: f64,
}

impl PosteriorSnapshot {
    pub fn new(posterior: &ModelPosterior) -> Self {
        let probs: Vec<f64> = posterior.log_probs.iter().map(|l| l.exp()).collect();
        let plogp: Vec<f64> = posterior.log_probs.iter().map(|&l| plogp(l)).collect();
        let total_plogp = plogp.iter().sum::<f64>();
        Self {
            total: probs.iter().sum(),
            probs,
            plogp,
            total_plogp,
            entropy: posterior_entropy(posterior),
        }
    }

    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// Expected posterior entropy after labeling an example whose model
    /// predictions are `row`.
    pub fn expected_entropy(&self, row: &[ClassId], eps: ErrorRate, mode: ClassMode, scratch: &mut EntropyScratch) -> f64 {
        if eps.is_flat() {
            return self.entropy;
        }
        scratch.clear();
        for (j, &c) in row.iter().enumerate() {
            scratch.add(c, self.probs[j], self.plogp[j]);
        }
        if scratch.touched.len() == 1 {
            // Unanimous prediction: the hypothetical update is flat.
            return self.entropy;
        }
        let hit = 1.0 - eps.value();
        let miss = eps.value();
        let (hit_log, miss_log) = (hit * eps.log_correct(), miss * eps.log_wrong());
        let m = row.len() as f64;
        // Σ_c Z_c over the predicted classes.
        let support = scratch.touched.len() as f64;
        let z_total = hit * self.total + miss * (support - 1.0) * self.total;
        let mut expected = 0.0;
        for &c in &scratch.touched {
            let c = c as usize;
            let mass = scratch.mass[c];
            let rest = self.total - mass;
            let z = hit * mass + miss * rest;
            let weight = match mode {
                ClassMode::Frequency => scratch.count[c] as f64 / m,
                ClassMode::PosteriorWeighted => mass / self.total,
                ClassMode::Predictive => z / z_total,
            };
            if weight <= 0.0 {
                continue;
            }
            let a = scratch.plogp[c];
            let cross = hit * a + miss * (self.total_plogp - a) + hit_log * mass + miss_log * rest;
            expected += weight * (z.ln() - cross / z);
        }
        expected.max(0.0)
    }
}

/// Reusable per-class accumulators, sized to the class count so that
/// scoring is linear in m even for large K.
#[derive(Debug, Clone)]
pub struct EntropyScratch {
    count: Vec<u32>,
    mass: Vec<f64>,
    plogp: Vec<f64>,
    touched: Vec<ClassId>,
}

impl EntropyScratch {
    pub fn new(num_classes: usize) -> Self {
        Self {
            count: vec![0; num_classes],
            mass: vec![0.0; num_classes],
            plogp: vec![0.0; num_classes],
            touched: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &c in &self.touched {
            let c = c as usize;
            self.count[c] = 0;
            self.mass[c] = 0.0;
            self.plogp[c] = 0.0;
        }
        self.touched.clear();
    }

    #[inline]
    fn add(&mut self, class: ClassId, p: f64, plogp: f64) {
        let c = class as usize;
        if self.count[c] == 0 {
            self.touched.push(class);
        }
        self.count[c] += 1;
        self.mass[c] += p;
        self.plogp[c] += plogp;
    }
}

/// Expected entropy of the model posterior after observing the label of
/// `example`.
pub fn expected_posterior_entropy(
    matrix: &PredictionMatrix,
    example: usize,
    posterior: &ModelPosterior,
    eps: ErrorRate,
    mode: ClassMode,
) -> Result<f64> {
    matrix.check_example(example)?;
    if posterior.num_models() != matrix.num_models() {
        return Err(Error::LengthMismatch {
            expected: matrix.num_models(),
            got: posterior.num_models(),
        });
    }
    let snapshot = PosteriorSnapshot::new(posterior);
    let mut scratch = EntropyScratch::new(matrix.num_classes());
    Ok(snapshot.expected_entropy(matrix.row(example), eps, mode, &mut scratch))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceStep {
    pub example: usize,
    pub observed: ClassId,
    pub correct: Vec<bool>,
}

/// Ordered labeled examples with per-model correctness.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    steps: Vec<EvidenceStep>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[EvidenceStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contains(&self, example: usize) -> bool {
        self.steps.iter().any(|s| s.example == example)
    }

    /// Appends an observation and returns the correctness bits.
    pub fn record(&mut self, matrix: &PredictionMatrix, example: usize, observed: ClassId) -> Result<&EvidenceStep> {
        matrix.check_example(example)?;
        matrix.check_class(observed as usize)?;
        if self.contains(example) {
            return Err(Error::AlreadyLabeled(example));
        }
        let correct = matrix.row(example).iter().map(|&p| p == observed).collect();
        self.steps.push(EvidenceStep {
            example,
            observed,
            correct,
        });
        Ok(self.steps.last().expect("just pushed"))
    }

    /// Number of correct predictions per model.
    pub fn correct_counts(&self, num_models: usize) -> Vec<usize> {
        let mut counts = vec![0; num_models];
        for step in &self.steps {
            for (count, &ok) in counts.iter_mut().zip(&step.correct) {
                *count += usize::from(ok);
            }
        }
        counts
    }

    /// Posterior computed in one shot from correct counts:
    /// `prior_j · (1−ε)^{c_j} · ε^{t−c_j}`, normalized.
    pub fn batch_posterior(&self, prior: &ModelPosterior, eps: ErrorRate) -> Result<ModelPosterior> {
        let t = self.len() as f64;
        let counts = self.correct_counts(prior.num_models());
        let weights = prior
            .log_probs()
            .iter()
            .zip(&counts)
            .map(|(&l, &c)| l + c as f64 * eps.log_correct() + (t - c as f64) * eps.log_wrong())
            .collect();
        ModelPosterior::from_log_weights(weights)
    }

    /// Posterior obtained by applying the steps one at a time.
    pub fn replay(&self, prior: &ModelPosterior, eps: ErrorRate) -> Result<ModelPosterior> {
        self.steps
            .iter()
            .try_fold(prior.clone(), |p, step| update_posterior(&p, &step.correct, eps))
    }
}
