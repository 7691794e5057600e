//! Label-free choice of the error rate ε.
//!
//! A surrogate oracle is built from the models' own predictions, the
//! evaluation protocol is run against it for every candidate ε, and the ε
//! with the largest area under the identification curve wins.

use serde::{Deserialize, Serialize};

use crate::data::{accuracy_profile, ClassId, LabelVector, PredictionMatrix, Provenance};
use crate::engine::ErrorRate;
use crate::error::{Error, Result};
use crate::eval::{identification_curve, run_experiment, sample_pool, CurvePoint, ExperimentConfig};
use crate::policies::PolicySpec;
use crate::seed::{self, tag};

use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisyMode {
    /// Most frequently predicted class, smallest id on ties.
    Majority,
    /// A class drawn from the prediction-frequency distribution.
    Sampled,
    /// Majority when `K ≤ auto_threshold`, sampled otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyOracleConfig {
    #[serde(default)]
    pub mode: NoisyMode,
    #[serde(default = "default_auto_threshold")]
    pub auto_threshold: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_auto_threshold() -> usize {
    10
}

impl Default for NoisyOracleConfig {
    fn default() -> Self {
        Self {
            mode: NoisyMode::Auto,
            auto_threshold: default_auto_threshold(),
            seed: 0,
        }
    }
}

impl NoisyOracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.auto_threshold < 2 {
            return Err(Error::Config("auto_threshold must be at least 2".into()));
        }
        Ok(())
    }

    pub fn resolved_mode(&self, num_classes: usize) -> NoisyMode {
        match self.mode {
            NoisyMode::Auto if num_classes <= self.auto_threshold => NoisyMode::Majority,
            NoisyMode::Auto => NoisyMode::Sampled,
            other => other,
        }
    }
}

fn majority(row: &[ClassId]) -> ClassId {
    let mut sorted = row.to_vec();
    sorted.sort_unstable();
    let mut best = (sorted[0], 0usize);
    for run in sorted.chunk_by(|a, b| a == b) {
        if run.len() > best.1 {
            best = (run[0], run.len());
        }
    }
    best.0
}

pub fn build_noisy_oracle(matrix: &PredictionMatrix, cfg: &NoisyOracleConfig) -> Result<LabelVector> {
    cfg.validate()?;
    let labels = match cfg.resolved_mode(matrix.num_classes()) {
        NoisyMode::Majority => matrix.rows().map(majority).collect(),
        _ => matrix
            .rows()
            .enumerate()
            .map(|(i, row)| {
                // Uniform over the m predictions is the frequency distribution.
                let mut rng = seed::derived_rng(cfg.seed, &[tag::NOISY, i as u64]);
                row[rng.gen_range(0..row.len())]
            })
            .collect(),
    };
    LabelVector::new(labels, Provenance::Noisy, matrix)
}

/// Candidate error rates, strictly ascending within (0, 0.5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EpsilonGrid {
    values: Vec<ErrorRate>,
}

impl EpsilonGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("epsilon grid must be nonempty".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("epsilon grid must be strictly ascending".into()));
        }
        let values = values
            .into_iter()
            .map(|v| {
                if v > 0.0 && v <= 0.5 {
                    ErrorRate::new(v)
                } else {
                    Err(Error::Config(format!("grid value {v} outside (0, 0.5]")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { values })
    }

    /// First-stage grid.
    pub fn coarse() -> Self {
        Self::new(vec![0.35, 0.40, 0.45, 0.49, 0.50]).expect("valid constant grid")
    }

    /// Hundredth steps within ±0.04 of `center`, clipped to (0, 0.5].
    pub fn fine_around(center: ErrorRate) -> Self {
        let c = (center.value() * 100.0).round() as i64;
        let values = (c - 4..=c + 4)
            .filter(|&k| (1..=50).contains(&k))
            .map(|k| k as f64 / 100.0)
            .collect();
        Self::new(values).expect("nonempty ascending grid")
    }

    pub fn values(&self) -> &[ErrorRate] {
        &self.values
    }
}

impl TryFrom<Vec<f64>> for EpsilonGrid {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EpsilonGrid> for Vec<f64> {
    fn from(grid: EpsilonGrid) -> Vec<f64> {
        grid.values.into_iter().map(ErrorRate::value).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonScore {
    pub epsilon: f64,
    /// Mean identification probability over budgets 1..=max_budget and all
    /// realizations.
    pub score: f64,
    pub successes: u64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCurve {
    pub epsilon: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub chosen_epsilon: f64,
    pub label_provenance: Provenance,
    pub config_hash: String,
    pub master_seed: u64,
    /// Ascending by ε.
    pub scores: Vec<EpsilonScore>,
    pub curves: Vec<EpsilonCurve>,
}

impl TuningReport {
    pub fn chosen(&self) -> ErrorRate {
        ErrorRate::new(self.chosen_epsilon).expect("chosen from a valid grid")
    }

    pub fn score(&self, epsilon: f64) -> Option<f64> {
        self.scores.iter().find(|s| s.epsilon == epsilon).map(|s| s.score)
    }

    fn merge(&mut self, other: TuningReport) {
        for (score, curve) in other.scores.into_iter().zip(other.curves) {
            if self.scores.iter().all(|s| s.epsilon != score.epsilon) {
                self.scores.push(score);
                self.curves.push(curve);
            }
        }
        let mut paired: Vec<_> = std::mem::take(&mut self.scores)
            .into_iter()
            .zip(std::mem::take(&mut self.curves))
            .collect();
        paired.sort_by(|a, b| a.0.epsilon.total_cmp(&b.0.epsilon));
        (self.scores, self.curves) = paired.into_iter().unzip();
        self.chosen_epsilon = pick_best(&self.scores);
    }
}

/// Largest success count wins; ties go to the larger ε. Counts share the
/// same denominator so the comparison is exact.
fn pick_best(scores: &[EpsilonScore]) -> f64 {
    scores
        .iter()
        .max_by(|a, b| {
            a.successes
                .cmp(&b.successes)
                .then(a.epsilon.total_cmp(&b.epsilon))
        })
        .expect("nonempty grid")
        .epsilon
}

/// Scores every ε in `grid` against the given labels, which may be the true
/// oracle or a noisy surrogate. Only `pool_size`, `max_budget`,
/// `realizations`, `master_seed` and the class mode of a model-selector
/// entry in `eval_cfg.policies` are used.
pub fn grid_search_with_labels(
    matrix: &PredictionMatrix,
    labels: &LabelVector,
    grid: &EpsilonGrid,
    eval_cfg: &ExperimentConfig,
) -> Result<TuningReport> {
    if eval_cfg.pool_size > matrix.num_examples() {
        return Err(Error::Config(format!(
            "pool_size {} exceeds the {} available examples",
            eval_cfg.pool_size,
            matrix.num_examples()
        )));
    }
    let class_mode = eval_cfg
        .policies
        .iter()
        .find(|p| p.epsilon.is_some())
        .map(|p| p.class_mode)
        .unwrap_or_default();

    let mut scores = Vec::with_capacity(grid.values().len());
    let mut curves = Vec::with_capacity(grid.values().len());
    let mut hash_cfg = None;
    for &eps in grid.values() {
        let mut cfg = ExperimentConfig::new(
            eval_cfg.pool_size,
            eval_cfg.max_budget,
            eval_cfg.realizations,
            eval_cfg.master_seed,
            vec![PolicySpec::model_selector(eps).with_class_mode(class_mode)],
        );
        cfg.metrics = eval_cfg.metrics.clone();
        let results = run_experiment(matrix, labels, &cfg)?;
        let curve = identification_curve(&results)?.remove(0);
        let successes: u64 = results
            .iter()
            .flat_map(|r| &r.per_policy[0].outcomes)
            .filter(|o| o.identified)
            .count() as u64;
        let trials = (cfg.realizations * cfg.max_budget) as u64;
        scores.push(EpsilonScore {
            epsilon: eps.value(),
            score: successes as f64 / trials as f64,
            successes,
            trials,
        });
        curves.push(EpsilonCurve {
            epsilon: eps.value(),
            points: curve.points,
        });
        hash_cfg.get_or_insert(cfg);
    }
    let mut hashed = hash_cfg.expect("nonempty grid");
    hashed.policies.clear();
    Ok(TuningReport {
        chosen_epsilon: pick_best(&scores),
        label_provenance: labels.provenance(),
        config_hash: hashed.hash(),
        master_seed: eval_cfg.master_seed,
        scores,
        curves,
    })
}

/// Coarse grid first, then hundredth steps around the coarse winner.
pub fn two_stage_search_with_labels(
    matrix: &PredictionMatrix,
    labels: &LabelVector,
    eval_cfg: &ExperimentConfig,
) -> Result<TuningReport> {
    let mut report = grid_search_with_labels(matrix, labels, &EpsilonGrid::coarse(), eval_cfg)?;
    let fine = EpsilonGrid::fine_around(report.chosen());
    let remaining: Vec<f64> = fine
        .values()
        .iter()
        .map(|e| e.value())
        .filter(|v| report.scores.iter().all(|s| s.epsilon != *v))
        .collect();
    if !remaining.is_empty() {
        let second = grid_search_with_labels(matrix, labels, &EpsilonGrid::new(remaining)?, eval_cfg)?;
        report.merge(second);
    }
    Ok(report)
}

/// Label-free ε selection on an explicit grid.
pub fn epsilon_grid_search(
    matrix: &PredictionMatrix,
    grid: &EpsilonGrid,
    eval_cfg: &ExperimentConfig,
    cfg: &NoisyOracleConfig,
) -> Result<TuningReport> {
    let noisy = build_noisy_oracle(matrix, cfg)?;
    grid_search_with_labels(matrix, &noisy, grid, eval_cfg)
}

/// Label-free ε selection; uses the two-stage grid when `grid` is `None`.
pub fn tune_epsilon(
    matrix: &PredictionMatrix,
    grid: Option<&EpsilonGrid>,
    eval_cfg: &ExperimentConfig,
    cfg: &NoisyOracleConfig,
) -> Result<TuningReport> {
    let noisy = build_noisy_oracle(matrix, cfg)?;
    match grid {
        Some(grid) => grid_search_with_labels(matrix, &noisy, grid, eval_cfg),
        None => two_stage_search_with_labels(matrix, &noisy, eval_cfg),
    }
}

/// How far the model that looks best under surrogate labels falls short of
/// the truly best model, in accuracy percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyBestGap {
    pub true_best: Vec<usize>,
    pub noisy_best: Vec<usize>,
    /// Gap on the full collection, using the lowest-index noisy-best model.
    pub gap_percent: f64,
    /// Mean over realization pools of the same gap computed per pool.
    pub mean_pool_gap_percent: f64,
    /// Fraction of realization pools where the noisy-best model is not a
    /// true-best model.
    pub pool_mismatch_rate: f64,
}

pub fn noisy_best_gap(
    matrix: &PredictionMatrix,
    truth: &LabelVector,
    noisy: &LabelVector,
    pool_size: usize,
    realizations: usize,
    master_seed: u64,
) -> Result<NoisyBestGap> {
    let true_profile = accuracy_profile(matrix, truth)?;
    let noisy_profile = accuracy_profile(matrix, noisy)?;
    let pick = noisy_profile.best_set[0];
    let gap_percent = 100.0 * (true_profile.best_accuracy() - true_profile.per_model_accuracy[pick]);

    let mut total_gap = 0.0;
    let mut mismatches = 0usize;
    for r in 0..realizations {
        let pool = sample_pool(matrix.num_examples(), pool_size, crate::eval::pool_seed(master_seed, r))?;
        let sub = matrix.select_examples(&pool)?;
        let t = accuracy_profile(&sub, &truth.select_examples(&pool))?;
        let n = accuracy_profile(&sub, &noisy.select_examples(&pool))?;
        let chosen = n.best_set[0];
        total_gap += 100.0 * (t.correct_counts[t.best_set[0]] - t.correct_counts[chosen]) as f64 / pool_size as f64;
        mismatches += usize::from(!t.is_best(chosen));
    }
    let r = realizations.max(1) as f64;
    Ok(NoisyBestGap {
        true_best: true_profile.best_set,
        noisy_best: noisy_profile.best_set,
        gap_percent,
        mean_pool_gap_percent: total_gap / r,
        pool_mismatch_rate: mismatches as f64 / r,
    })
}
