//! Realization-based evaluation protocol and its metrics.
//!
//! A realization samples a pool of examples, runs every policy on that pool
//! up to the maximal budget while answering queries from the label vector,
//! and compares the model each policy would pick at every reported budget
//! against the pool's true best set.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{accuracy_profile, LabelVector, PredictionMatrix};
use crate::error::{Error, Result};
use crate::policies::{final_selection, init_state, next_query, record_label, PolicySpec};
use crate::seed::{self, tag};

/// Gaps at most this far above a threshold still count as within it.
const GAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsOptions {
    /// Percentiles (in (0, 100]) of the accuracy gap to tabulate.
    pub percentiles: Vec<f64>,
    /// Vicinity thresholds δ in accuracy percentage points.
    pub deltas: Vec<f64>,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            percentiles: vec![90.0, 95.0],
            deltas: vec![0.0, 0.1, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pool_size: usize,
    pub max_budget: usize,
    pub realizations: usize,
    pub master_seed: u64,
    pub policies: Vec<PolicySpec>,
    /// Ascending budgets at which selections are recorded.
    pub budgets_to_report: Vec<usize>,
    #[serde(default)]
    pub metrics: MetricsOptions,
}

impl ExperimentConfig {
    pub fn new(pool_size: usize, max_budget: usize, realizations: usize, master_seed: u64, policies: Vec<PolicySpec>) -> Self {
        Self {
            pool_size,
            max_budget,
            realizations,
            master_seed,
            policies,
            budgets_to_report: (1..=max_budget).collect(),
            metrics: MetricsOptions::default(),
        }
    }

    pub fn validate(&self, num_examples: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.pool_size == 0 || self.pool_size > num_examples {
            return fail(format!("pool_size {} must lie in [1, {num_examples}]", self.pool_size));
        }
        if self.max_budget == 0 || self.max_budget > self.pool_size {
            return fail(format!(
                "max_budget {} must lie in [1, pool_size = {}]",
                self.max_budget, self.pool_size
            ));
        }
        if self.realizations == 0 {
            return fail("realizations must be positive".into());
        }
        if self.policies.is_empty() {
            return fail("at least one policy is required".into());
        }
        let mut labels = BTreeSet::new();
        for spec in &self.policies {
            spec.validate()?;
            if !labels.insert(spec.label()) {
                return fail(format!("policy {} listed twice", spec.label()));
            }
        }
        if self.budgets_to_report.is_empty() {
            return fail("budgets_to_report must be nonempty".into());
        }
        if self.budgets_to_report.windows(2).any(|w| w[0] >= w[1]) {
            return fail("budgets_to_report must be strictly ascending".into());
        }
        if self.budgets_to_report[0] == 0 || *self.budgets_to_report.last().unwrap() > self.max_budget {
            return fail(format!("budgets_to_report must lie in [1, {}]", self.max_budget));
        }
        if self.metrics.percentiles.iter().any(|&q| !(q > 0.0 && q <= 100.0)) {
            return fail("percentiles must lie in (0, 100]".into());
        }
        if self.metrics.deltas.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return fail("deltas must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

/// SHA-256 (hex) of the compact JSON encoding.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Uniform sample of `pool_size` distinct example indices, ascending.
pub fn sample_pool(num_examples: usize, pool_size: usize, seed: u64) -> Result<Vec<usize>> {
    if pool_size > num_examples {
        return Err(Error::Config(format!(
            "pool_size {pool_size} exceeds the {num_examples} available examples"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut pool = index::sample(&mut rng, num_examples, pool_size).into_vec();
    pool.sort_unstable();
    Ok(pool)
}

pub fn pool_seed(master_seed: u64, realization_id: usize) -> u64 {
    seed::derive(master_seed, &[tag::POOL, realization_id as u64])
}

/// Seed of the query stream. Shared by all policies of a realization so
/// that comparisons use common random numbers.
pub fn query_seed(master_seed: u64, realization_id: usize) -> u64 {
    seed::derive(master_seed, &[tag::QUERY, realization_id as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    pub budget: usize,
    pub selected: usize,
    pub identified: bool,
    /// Pool accuracy of the best model minus that of the selected model,
    /// in percentage points.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub policy: String,
    pub outcomes: Vec<BudgetOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub realization_id: usize,
    pub pool: Vec<usize>,
    /// Model indices attaining the best accuracy on the pool.
    pub true_best_set: Vec<usize>,
    pub best_accuracy: f64,
    pub per_policy: Vec<PolicyOutcome>,
}

impl RealizationResult {
    pub fn policy(&self, label: &str) -> Option<&PolicyOutcome> {
        self.per_policy.iter().find(|p| p.policy == label)
    }
}

pub fn run_realization(
    matrix: &PredictionMatrix,
    labels: &LabelVector,
    cfg: &ExperimentConfig,
    realization_id: usize,
) -> Result<RealizationResult> {
    cfg.validate(matrix.num_examples())?;
    if labels.len() != matrix.num_examples() {
        return Err(Error::LengthMismatch {
            expected: matrix.num_examples(),
            got: labels.len(),
        });
    }
    let pool = sample_pool(matrix.num_examples(), cfg.pool_size, pool_seed(cfg.master_seed, realization_id))?;
    let sub = matrix.select_examples(&pool)?;
    let sub_labels = labels.select_examples(&pool);
    let profile = accuracy_profile(&sub, &sub_labels)?;
    let best_count = profile.correct_counts[profile.best_set[0]];
    let qseed = query_seed(cfg.master_seed, realization_id);

    let mut per_policy = Vec::with_capacity(cfg.policies.len());
    for spec in &cfg.policies {
        let mut state = init_state(&sub, spec, qseed)?;
        let mut outcomes = Vec::with_capacity(cfg.budgets_to_report.len());
        let mut next_report = cfg.budgets_to_report.iter().peekable();
        for t in 1..=cfg.max_budget {
            let x = next_query(&mut state, &sub, spec)?;
            record_label(&mut state, &sub, x, sub_labels.get(x), spec)?;
            if next_report.peek() == Some(&&t) {
                next_report.next();
                let pick = final_selection(&state, &sub)?;
                let count = profile.correct_counts[pick.model_index];
                outcomes.push(BudgetOutcome {
                    budget: t,
                    selected: pick.model_index,
                    identified: count == best_count,
                    gap: 100.0 * (best_count - count) as f64 / cfg.pool_size as f64,
                });
            }
        }
        per_policy.push(PolicyOutcome {
            policy: spec.label(),
            outcomes,
        });
    }
    Ok(RealizationResult {
        realization_id,
        pool,
        best_accuracy: profile.best_accuracy(),
        true_best_set: profile.best_set,
        per_policy,
    })
}

/// Runs all realizations on the current rayon pool; output order and
/// content do not depend on the number of workers.
pub fn run_experiment(matrix: &PredictionMatrix, labels: &LabelVector, cfg: &ExperimentConfig) -> Result<Vec<RealizationResult>> {
    cfg.validate(matrix.num_examples())?;
    (0..cfg.realizations)
        .into_par_iter()
        .map(|r| run_realization(matrix, labels, cfg, r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurve {
    pub policy: String,
    pub points: Vec<CurvePoint>,
}

fn policy_labels(results: &[RealizationResult]) -> Vec<String> {
    results
        .first()
        .map(|r| r.per_policy.iter().map(|p| p.policy.clone()).collect())
        .unwrap_or_default()
}

fn outcomes<'a>(results: &'a [RealizationResult], policy: &str) -> Result<Vec<&'a [BudgetOutcome]>> {
    results
        .iter()
        .map(|r| {
            r.policy(policy)
                .map(|p| p.outcomes.as_slice())
                .ok_or_else(|| Error::Invalid(format!("no results for policy {policy}")))
        })
        .collect()
}

/// Fraction of realizations whose selection is a true-best member, per
/// policy and reported budget.
pub fn identification_curve(results: &[RealizationResult]) -> Result<Vec<PolicyCurve>> {
    if results.is_empty() {
        return Err(Error::Invalid("at least one realization is required".into()));
    }
    let r = results.len() as f64;
    policy_labels(results)
        .into_iter()
        .map(|policy| {
            let rows = outcomes(results, &policy)?;
            let points = rows[0]
                .iter()
                .enumerate()
                .map(|(k, o)| CurvePoint {
                    budget: o.budget,
                    value: rows.iter().filter(|row| row[k].identified).count() as f64 / r,
                })
                .collect();
            Ok(PolicyCurve { policy, points })
        })
        .collect()
}

/// Nearest-rank percentile: the element of rank `ceil(q·R/100)` in the
/// ascending order.
pub fn nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::Invalid(format!("percentile {q} outside (0, 100]")));
    }
    if values.is_empty() {
        return Err(Error::Invalid("no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64 / 100.0).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

pub fn percentile_gap(results: &[RealizationResult], policy: &str, budget: usize, q: f64) -> Result<f64> {
    let gaps = outcomes(results, policy)?
        .into_iter()
        .map(|row| {
            row.iter()
                .find(|o| o.budget == budget)
                .map(|o| o.gap)
                .ok_or_else(|| Error::Invalid(format!("budget {budget} was not reported")))
        })
        .collect::<Result<Vec<_>>>()?;
    nearest_rank(&gaps, q)
}

/// Smallest reported budget from which every later reported budget keeps
/// every realization within `delta` percentage points of the best model.
pub fn vicinity_budget(results: &[RealizationResult], policy: &str, delta: f64) -> Result<Option<usize>> {
    let rows = outcomes(results, policy)?;
    let Some(first) = rows.first() else {
        return Ok(None);
    };
    let mut answer = None;
    for k in (0..first.len()).rev() {
        if rows.iter().all(|row| row[k].gap <= delta + GAP_EPS) {
            answer = Some(first[k].budget);
        } else {
            break;
        }
    }
    Ok(answer)
}

/// Percentage of labels saved by a method needing `budget_a` labels
/// relative to one needing `budget_b`.
pub fn reduction_percent(budget_a: usize, budget_b: usize) -> f64 {
    100.0 * (budget_b as f64 - budget_a as f64) / budget_b as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEfficiency {
    pub policy_a: String,
    pub policy_b: String,
    pub delta: f64,
    pub budget_a: Option<usize>,
    pub budget_b: Option<usize>,
    /// `None` when either policy never reaches the δ-vicinity.
    pub reduction_percent: Option<f64>,
}

pub fn label_efficiency(results: &[RealizationResult], policy_a: &str, policy_b: &str, delta: f64) -> Result<LabelEfficiency> {
    let budget_a = vicinity_budget(results, policy_a, delta)?;
    let budget_b = vicinity_budget(results, policy_b, delta)?;
    Ok(LabelEfficiency {
        policy_a: policy_a.to_owned(),
        policy_b: policy_b.to_owned(),
        delta,
        budget_a,
        budget_b,
        reduction_percent: budget_a.zip(budget_b).map(|(a, b)| reduction_percent(a, b)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileCurve {
    pub policy: String,
    pub percentile: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VicinityBudget {
    pub policy: String,
    pub delta: f64,
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub master_seed: u64,
    pub num_examples: usize,
    pub num_models: usize,
    pub config: ExperimentConfig,
    pub identification: Vec<PolicyCurve>,
    pub percentile_gaps: Vec<PercentileCurve>,
    pub vicinity_budgets: Vec<VicinityBudget>,
    pub label_efficiency: Vec<LabelEfficiency>,
}

impl MetricsReport {
    pub fn curve(&self, policy: &str) -> Option<&PolicyCurve> {
        self.identification.iter().find(|c| c.policy == policy)
    }

    pub fn vicinity(&self, policy: &str, delta: f64) -> Option<usize> {
        self.vicinity_budgets
            .iter()
            .find(|v| v.policy == policy && v.delta == delta)
            .and_then(|v| v.budget)
    }
}

pub fn build_report(matrix: &PredictionMatrix, cfg: &ExperimentConfig, results: &[RealizationResult]) -> Result<MetricsReport> {
    let identification = identification_curve(results)?;
    let policies = policy_labels(results);
    let mut percentile_gaps = Vec::new();
    for policy in &policies {
        for &q in &cfg.metrics.percentiles {
            let points = cfg
                .budgets_to_report
                .iter()
                .map(|&b| Ok(CurvePoint { budget: b, value: percentile_gap(results, policy, b, q)? }))
                .collect::<Result<_>>()?;
            percentile_gaps.push(PercentileCurve {
                policy: policy.clone(),
                percentile: q,
                points,
            });
        }
    }
    let mut vicinity_budgets = Vec::new();
    for policy in &policies {
        for &delta in &cfg.metrics.deltas {
            vicinity_budgets.push(VicinityBudget {
                policy: policy.clone(),
                delta,
                budget: vicinity_budget(results, policy, delta)?,
            });
        }
    }
    let mut label_efficiency = Vec::new();
    for a in &policies {
        for b in policies.iter().filter(|b| *b != a) {
            for &delta in &cfg.metrics.deltas {
                label_efficiency.push(self::label_efficiency(results, a, b, delta)?);
            }
        }
    }
    Ok(MetricsReport {
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        num_examples: matrix.num_examples(),
        num_models: matrix.num_models(),
        config: cfg.clone(),
        identification,
        percentile_gaps,
        vicinity_budgets,
        label_efficiency,
    })
}

pub fn export_report(report: &MetricsReport, destination: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(destination)?;
    serde_json::to_writer_pretty(&mut file, report)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn import_report(source: impl AsRef<Path>) -> Result<MetricsReport> {
    Ok(serde_json::from_slice(&fs::read(source)?)?)
}

fn write_curve_csv(path: &Path, rows: &mut [(usize, usize, String, f64)]) -> Result<()> {
    rows.sort_by_key(|r| (r.0, r.1));
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["budget", "policy", "value"])?;
    for (budget, _, policy, value) in rows.iter() {
        writer.write_record([budget.to_string(), policy.clone(), value.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes one plot-ready CSV (`budget,policy,value`) per figure panel:
/// the identification curves and one file per gap percentile. Returns the
/// paths written.
pub fn export_curve_csvs(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut rows = Vec::new();
    for (k, curve) in report.identification.iter().enumerate() {
        rows.extend(curve.points.iter().map(|p| (p.budget, k, curve.policy.clone(), p.value)));
    }
    let path = dir.join("identification.csv");
    write_curve_csv(&path, &mut rows)?;
    written.push(path);

    for &q in &report.config.metrics.percentiles {
        let mut rows = Vec::new();
        for (k, curve) in report.percentile_gaps.iter().filter(|c| c.percentile == q).enumerate() {
            rows.extend(curve.points.iter().map(|p| (p.budget, k, curve.policy.clone(), p.value)));
        }
        let path = dir.join(format!("gap_p{q}.csv"));
        write_curve_csv(&path, &mut rows)?;
        written.push(path);
    }
    Ok(written)
}
