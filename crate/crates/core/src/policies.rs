//! Query-selection strategies and the shared final-selection rule.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, PredictionMatrix};
use crate::engine::{
    class_distribution, update_posterior, ClassMode, ClassWeighting, EntropyScratch, ErrorRate, Evidence,
    ModelPosterior, PosteriorSnapshot,
};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Scores within this distance of the minimum count as tied.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

/// Error rate used to maintain the display posterior of baselines, which
/// never use it to choose queries.
pub const DISPLAY_EPSILON: f64 = 0.45;

/// Unlabeled pools at least this large are scored in parallel.
const PARALLEL_SCORING_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ModelSelector,
    Random,
    Uncertainty,
    Margin,
    Amc,
    Vma,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::ModelSelector,
        PolicyKind::Random,
        PolicyKind::Uncertainty,
        PolicyKind::Margin,
        PolicyKind::Amc,
        PolicyKind::Vma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::ModelSelector => "model_selector",
            PolicyKind::Random => "random",
            PolicyKind::Uncertainty => "uncertainty",
            PolicyKind::Margin => "margin",
            PolicyKind::Amc => "amc",
            PolicyKind::Vma => "vma",
        }
    }

    pub fn is_adaptive(self) -> bool {
        !matches!(self, PolicyKind::Uncertainty | PolicyKind::Margin)
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// Which end of the margin ranking is queried first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginOrder {
    #[default]
    Smallest,
    Largest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<ErrorRate>,
    #[serde(default)]
    pub class_mode: ClassMode,
    #[serde(default)]
    pub margin_order: MarginOrder,
}

impl PolicySpec {
    pub fn model_selector(epsilon: ErrorRate) -> Self {
        Self {
            kind: PolicyKind::ModelSelector,
            epsilon: Some(epsilon),
            class_mode: ClassMode::default(),
            margin_order: MarginOrder::Smallest,
        }
    }

    pub fn baseline(kind: PolicyKind) -> Self {
        Self {
            kind,
            epsilon: None,
            class_mode: ClassMode::default(),
            margin_order: MarginOrder::Smallest,
        }
    }

    pub fn with_class_mode(mut self, mode: ClassMode) -> Self {
        self.class_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.epsilon) {
            (PolicyKind::ModelSelector, None) => Err(Error::Config("model_selector requires epsilon".into())),
            (kind, Some(_)) if kind != PolicyKind::ModelSelector => {
                Err(Error::Config(format!("epsilon is only valid for model_selector, not {}", kind.name())))
            }
            _ => Ok(()),
        }
    }

    /// Error rate used for posterior updates.
    pub fn posterior_epsilon(&self) -> ErrorRate {
        self.epsilon
            .unwrap_or_else(|| ErrorRate::new(DISPLAY_EPSILON).expect("constant in range"))
    }

    /// Unique, human-readable identifier used as a report key.
    pub fn label(&self) -> String {
        let mut label = self.kind.name().to_owned();
        if let Some(e) = self.epsilon {
            label.push_str(&format!("@{e}"));
        }
        if self.kind == PolicyKind::Margin && self.margin_order == MarginOrder::Largest {
            label.push_str("_largest");
        }
        match self.class_mode {
            ClassMode::Predictive => {}
            ClassMode::PosteriorWeighted => label.push_str("+pw"),
            ClassMode::Frequency => label.push_str("+freq"),
        }
        label
    }
}

/// One run's mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    evidence: Evidence,
    labeled: Vec<bool>,
    // Ascending.
    unlabeled: Vec<usize>,
    posterior: ModelPosterior,
    rng: Rng,
    // Fixed query order for non-adaptive policies.
    order: Vec<usize>,
    cursor: usize,
    // Static sampling weights for amc and frequency-mode vma.
    weights: Vec<f64>,
}

pub fn init_state(matrix: &PredictionMatrix, spec: &PolicySpec, seed: u64) -> Result<SelectionState> {
    let prior = ModelPosterior::uniform(matrix.num_models())?;
    init_state_with_prior(matrix, spec, seed, prior)
}

pub fn init_state_with_prior(
    matrix: &PredictionMatrix,
    spec: &PolicySpec,
    seed: u64,
    prior: ModelPosterior,
) -> Result<SelectionState> {
    spec.validate()?;
    if prior.num_models() != matrix.num_models() {
        return Err(Error::LengthMismatch {
            expected: matrix.num_models(),
            got: prior.num_models(),
        });
    }
    let n = matrix.num_examples();
    let mut rng = seed::rng(seed);
    let mut order = Vec::new();
    let mut weights = Vec::new();
    match spec.kind {
        PolicyKind::Uncertainty | PolicyKind::Margin => {
            // Non-adaptive: rank once with the prior-weighted class
            // distribution, ties resolved by a seeded shuffle.
            let weighting = spec.class_mode.weighting(&prior);
            let mut keyed = Vec::with_capacity(n);
            for i in 0..n {
                let dist = class_distribution(matrix, i, weighting)?;
                let key = match (spec.kind, spec.margin_order) {
                    (PolicyKind::Uncertainty, _) => -quantize(dist.entropy()),
                    (_, MarginOrder::Smallest) => quantize(dist.margin()),
                    (_, MarginOrder::Largest) => -quantize(dist.margin()),
                };
                keyed.push((key, i));
            }
            keyed.shuffle(&mut rng);
            keyed.sort_by_key(|&(key, _)| key);
            order = keyed.into_iter().map(|(_, i)| i).collect();
        }
        PolicyKind::Amc => {
            weights = (0..n).map(|i| disagreeing_pairs(matrix.row(i))).collect();
        }
        PolicyKind::Vma if spec.class_mode == ClassMode::Frequency => {
            weights = (0..n)
                .map(|i| vma_weight(matrix, i, ClassWeighting::Frequency))
                .collect::<Result<_>>()?;
        }
        _ => {}
    }
    Ok(SelectionState {
        evidence: Evidence::new(),
        labeled: vec![false; n],
        unlabeled: (0..n).collect(),
        posterior: prior,
        rng,
        order,
        cursor: 0,
        weights,
    })
}

fn quantize(x: f64) -> i64 {
    (x * 1e12).round() as i64
}

/// Number of unordered model pairs whose predictions differ.
pub fn disagreeing_pairs(row: &[ClassId]) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_unstable();
    let m = row.len();
    let same: usize = sorted
        .chunk_by(|a, b| a == b)
        .map(|run| run.len() * (run.len() - 1) / 2)
        .sum();
    (m * (m - 1) / 2 - same) as f64
}

/// Square root of the summed Bernoulli variances of per-model losses, each
/// model's loss probability being one minus the class probability of its
/// prediction.
pub fn vma_weight(matrix: &PredictionMatrix, example: usize, weighting: ClassWeighting<'_>) -> Result<f64> {
    let dist = class_distribution(matrix, example, weighting)?;
    let total: f64 = matrix
        .row(example)
        .iter()
        .map(|&c| {
            let loss = 1.0 - dist.prob(c);
            loss * (1.0 - loss)
        })
        .sum();
    Ok(total.max(0.0).sqrt())
}

impl SelectionState {
    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn posterior(&self) -> &ModelPosterior {
        &self.posterior
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn is_labeled(&self, example: usize) -> bool {
        self.labeled.get(example).copied().unwrap_or(false)
    }

    pub fn step(&self) -> usize {
        self.evidence.len()
    }

    /// Fixed query order of a non-adaptive policy (empty otherwise).
    pub fn fixed_order(&self) -> &[usize] {
        &self.order
    }

    fn pick_uniform(&mut self, candidates: &[usize]) -> usize {
        candidates[self.rng.gen_range(0..candidates.len())]
    }

    fn sample_weighted(&mut self, weight_of: impl Fn(usize) -> f64) -> usize {
        let weights: Vec<f64> = self.unlabeled.iter().map(|&i| weight_of(i)).collect();
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            let pool = std::mem::take(&mut self.unlabeled);
            let pick = self.pick_uniform(&pool);
            self.unlabeled = pool;
            return pick;
        }
        let target = self.rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut last_positive = self.unlabeled[0];
        for (&i, &w) in self.unlabeled.iter().zip(&weights) {
            if w > 0.0 {
                acc += w;
                last_positive = i;
                if acc > target {
                    return i;
                }
            }
        }
        last_positive
    }
}

/// Expected posterior entropy of every unlabeled example, in the order of
/// `state.unlabeled()`.
pub fn score_candidates(state: &SelectionState, matrix: &PredictionMatrix, eps: ErrorRate, mode: ClassMode) -> Vec<f64> {
    let snapshot = PosteriorSnapshot::new(&state.posterior);
    let k = matrix.num_classes();
    if state.unlabeled.len() >= PARALLEL_SCORING_THRESHOLD {
        state
            .unlabeled
            .par_iter()
            .map_init(
                || EntropyScratch::new(k),
                |scratch, &i| snapshot.expected_entropy(matrix.row(i), eps, mode, scratch),
            )
            .collect()
    } else {
        let mut scratch = EntropyScratch::new(k);
        state
            .unlabeled
            .iter()
            .map(|&i| snapshot.expected_entropy(matrix.row(i), eps, mode, &mut scratch))
            .collect()
    }
}

/// Chooses the next example to label. Consumes randomness but never
/// changes the evidence.
pub fn next_query(state: &mut SelectionState, matrix: &PredictionMatrix, spec: &PolicySpec) -> Result<usize> {
    if state.unlabeled.is_empty() {
        return Err(Error::PoolExhausted);
    }
    if state.labeled.len() != matrix.num_examples() {
        return Err(Error::Invalid("selection state belongs to a different matrix".into()));
    }
    let pick = match spec.kind {
        PolicyKind::ModelSelector => {
            let eps = spec.epsilon.ok_or_else(|| Error::Config("model_selector requires epsilon".into()))?;
            let scores = score_candidates(state, matrix, eps, spec.class_mode);
            let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let ties: Vec<usize> = state
                .unlabeled
                .iter()
                .zip(&scores)
                .filter(|&(_, &s)| s <= best + SCORE_TIE_TOLERANCE)
                .map(|(&i, _)| i)
                .collect();
            state.pick_uniform(&ties)
        }
        PolicyKind::Random => {
            let pool = std::mem::take(&mut state.unlabeled);
            let pick = state.pick_uniform(&pool);
            state.unlabeled = pool;
            pick
        }
        PolicyKind::Uncertainty | PolicyKind::Margin => {
            while state.labeled[state.order[state.cursor]] {
                state.cursor += 1;
            }
            state.order[state.cursor]
        }
        PolicyKind::Amc => {
            let weights = std::mem::take(&mut state.weights);
            let pick = state.sample_weighted(|i| weights[i]);
            state.weights = weights;
            pick
        }
        PolicyKind::Vma => match spec.class_mode {
            ClassMode::Frequency => {
                let weights = std::mem::take(&mut state.weights);
                let pick = state.sample_weighted(|i| weights[i]);
                state.weights = weights;
                pick
            }
            ClassMode::PosteriorWeighted | ClassMode::Predictive => {
                let posterior = state.posterior.clone();
                let weights: Vec<f64> = (0..matrix.num_examples())
                    .map(|i| {
                        if state.labeled[i] {
                            Ok(0.0)
                        } else {
                            vma_weight(matrix, i, ClassWeighting::Posterior(&posterior))
                        }
                    })
                    .collect::<Result<_>>()?;
                state.sample_weighted(|i| weights[i])
            }
        },
    };
    Ok(pick)
}

/// Records the oracle's answer for `example` and updates the posterior.
pub fn record_label(
    state: &mut SelectionState,
    matrix: &PredictionMatrix,
    example: usize,
    observed: ClassId,
    spec: &PolicySpec,
) -> Result<()> {
    matrix.check_example(example)?;
    if state.labeled[example] {
        return Err(Error::AlreadyLabeled(example));
    }
    let step = state.evidence.record(matrix, example, observed)?;
    state.posterior = update_posterior(&state.posterior, &step.correct, spec.posterior_epsilon())?;
    state.labeled[example] = true;
    if let Ok(pos) = state.unlabeled.binary_search(&example) {
        state.unlabeled.remove(pos);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSelection {
    pub model_index: usize,
    pub labeled_accuracy: f64,
    pub posterior_mass: f64,
}

/// Models ordered by labeled accuracy, then posterior mass, then index.
/// Log posteriors are compared on a 1e-9 grid so that round-off from
/// different update orders does not break exact ties.
pub fn rank_models(evidence: &Evidence, posterior: &ModelPosterior) -> Vec<usize> {
    let counts = evidence.correct_counts(posterior.num_models());
    let keys: Vec<i64> = posterior
        .log_probs()
        .iter()
        .map(|&l| (l * 1e9).round() as i64)
        .collect();
    let mut order: Vec<usize> = (0..posterior.num_models()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then_with(|| keys[b].cmp(&keys[a])));
    order
}

pub fn final_selection(state: &SelectionState, matrix: &PredictionMatrix) -> Result<FinalSelection> {
    if state.evidence.is_empty() {
        return Err(Error::NoEvidence);
    }
    if state.posterior.num_models() != matrix.num_models() {
        return Err(Error::Invalid("selection state belongs to a different matrix".into()));
    }
    let model = rank_models(&state.evidence, &state.posterior)[0];
    let correct = state.evidence.correct_counts(matrix.num_models())[model];
    Ok(FinalSelection {
        model_index: model,
        labeled_accuracy: correct as f64 / state.evidence.len() as f64,
        posterior_mass: state.posterior.mass(model),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model_index: usize,
    pub model_name: String,
    /// `None` before any label has been observed.
    pub labeled_accuracy: Option<f64>,
    pub posterior_mass: f64,
}

/// Every model in final-selection order.
pub fn leaderboard(state: &SelectionState, matrix: &PredictionMatrix) -> Vec<LeaderboardRow> {
    let t = state.evidence.len();
    let counts = state.evidence.correct_counts(matrix.num_models());
    rank_models(&state.evidence, &state.posterior)
        .into_iter()
        .map(|j| LeaderboardRow {
            model_index: j,
            model_name: matrix.model_names()[j].clone(),
            labeled_accuracy: (t > 0).then(|| counts[j] as f64 / t as f64),
            posterior_mass: state.posterior.mass(j),
        })
        .collect()
}

/// Runs a policy against a fixed label vector for `budget` steps and
/// returns the queried examples.
pub fn run_policy(
    matrix: &PredictionMatrix,
    labels: &[ClassId],
    spec: &PolicySpec,
    seed: u64,
    budget: usize,
) -> Result<(SelectionState, Vec<usize>)> {
    if labels.len() != matrix.num_examples() {
        return Err(Error::LengthMismatch {
            expected: matrix.num_examples(),
            got: labels.len(),
        });
    }
    let mut state = init_state(matrix, spec, seed)?;
    let mut queries = Vec::with_capacity(budget);
    for _ in 0..budget {
        let x = next_query(&mut state, matrix, spec)?;
        record_label(&mut state, matrix, x, labels[x], spec)?;
        queries.push(x);
    }
    Ok((state, queries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1() -> PredictionMatrix {
        PredictionMatrix::from_rows(vec![vec![0, 0, 1], vec![1, 1, 1], vec![0, 1, 1], vec![1, 0, 0]], None).unwrap()
    }

    fn ms(e: f64) -> PolicySpec {
        PolicySpec::model_selector(ErrorRate::new(e).unwrap())
    }

    #[test]
    fn spec_validation() {
        assert!(PolicySpec::baseline(PolicyKind::ModelSelector).validate().is_err());
        let mut bad = PolicySpec::baseline(PolicyKind::Random);
        bad.epsilon = Some(ErrorRate::new(0.4).unwrap());
        assert!(bad.validate().is_err());
        assert_eq!(ms(0.47).label(), "model_selector@0.47");
        assert_eq!("amc".parse::<PolicyKind>().unwrap(), PolicyKind::Amc);
    }

    #[test]
    fn init_is_deterministic() {
        let m = t1();
        let a = init_state(&m, &ms(0.4), 7).unwrap();
        let b = init_state(&m, &ms(0.4), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.step(), 0);
        assert_eq!(a.posterior(), &ModelPosterior::uniform(3).unwrap());
    }

    #[test]
    fn model_selector_never_picks_agreement_example_on_t1() {
        let m = t1();
        for seed in 0..200 {
            let mut s = init_state(&m, &ms(0.4), seed).unwrap();
            let q = next_query(&mut s, &m, &ms(0.4)).unwrap();
            assert_ne!(q, 1);
        }
    }

    #[test]
    fn uncertainty_and_margin_put_agreement_last() {
        let m = t1();
        for kind in [PolicyKind::Uncertainty, PolicyKind::Margin] {
            for seed in 0..20 {
                let s = init_state(&m, &PolicySpec::baseline(kind), seed).unwrap();
                assert_eq!(s.fixed_order()[3], 1, "{kind:?}");
            }
        }
        let mut largest = PolicySpec::baseline(PolicyKind::Margin);
        largest.margin_order = MarginOrder::Largest;
        let s = init_state(&m, &largest, 3).unwrap();
        assert_eq!(s.fixed_order()[0], 1);
    }

    #[test]
    fn amc_and_vma_weights() {
        let m = t1();
        let amc: Vec<f64> = m.rows().map(disagreeing_pairs).collect();
        assert_eq!(amc, vec![2.0, 0.0, 2.0, 2.0]);
        let vma: Vec<f64> = (0..4).map(|i| vma_weight(&m, i, ClassWeighting::Frequency).unwrap()).collect();
        for (i, w) in vma.iter().enumerate() {
            let want = if i == 1 { 0.0 } else { (2.0f64 / 3.0).sqrt() };
            assert!((w - want).abs() < 1e-12, "{vma:?}");
        }
        for kind in [PolicyKind::Amc, PolicyKind::Vma] {
            for seed in 0..100 {
                let mut s = init_state(&m, &PolicySpec::baseline(kind), seed).unwrap();
                assert_ne!(next_query(&mut s, &m, &PolicySpec::baseline(kind)).unwrap(), 1);
            }
        }
    }

    #[test]
    fn record_label_updates_posterior() {
        let m = t1();
        let spec = ms(0.4);
        let mut s = init_state(&m, &spec, 1).unwrap();
        record_label(&mut s, &m, 2, 1, &spec).unwrap();
        assert_eq!(s.step(), 1);
        for (p, want) in s.posterior().probs().iter().zip([0.25, 0.375, 0.375]) {
            assert!((p - want).abs() < 1e-15);
        }
        assert!(matches!(record_label(&mut s, &m, 2, 1, &spec), Err(Error::AlreadyLabeled(2))));
        assert_eq!(s.unlabeled(), &[0, 1, 3]);

        let flat = ms(0.5);
        let mut f = init_state(&m, &flat, 1).unwrap();
        record_label(&mut f, &m, 2, 1, &flat).unwrap();
        for p in f.posterior().probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn final_selection_tie_break_chain() {
        let m = t1();
        let spec = ms(0.4);
        let mut s = init_state(&m, &spec, 1).unwrap();
        assert!(matches!(final_selection(&s, &m), Err(Error::NoEvidence)));
        record_label(&mut s, &m, 2, 1, &spec).unwrap();
        record_label(&mut s, &m, 3, 0, &spec).unwrap();
        let pick = final_selection(&s, &m).unwrap();
        assert_eq!(pick.model_index, 1);
        assert_eq!(pick.labeled_accuracy, 1.0);

        let mut all = init_state(&m, &spec, 1).unwrap();
        record_label(&mut all, &m, 1, 1, &spec).unwrap();
        assert_eq!(final_selection(&all, &m).unwrap().model_index, 0);
    }

    #[test]
    fn full_labeling_finds_true_best() {
        let m = t1();
        let labels = [0, 1, 1, 0];
        for kind in PolicyKind::ALL {
            let spec = if kind == PolicyKind::ModelSelector { ms(0.4) } else { PolicySpec::baseline(kind) };
            let (state, queries) = run_policy(&m, &labels, &spec, 11, 4).unwrap();
            let mut sorted = queries.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2, 3]);
            assert_eq!(final_selection(&state, &m).unwrap().model_index, 1);
            assert!(matches!(
                next_query(&mut state.clone(), &m, &spec),
                Err(Error::PoolExhausted)
            ));
        }
    }

    #[test]
    fn leaderboard_order() {
        let m = t1();
        let spec = ms(0.4);
        let mut s = init_state(&m, &spec, 1).unwrap();
        let fresh = leaderboard(&s, &m);
        assert!(fresh.iter().all(|r| r.labeled_accuracy.is_none()));
        record_label(&mut s, &m, 2, 1, &spec).unwrap();
        record_label(&mut s, &m, 3, 0, &spec).unwrap();
        let board = leaderboard(&s, &m);
        assert_eq!(board[0].model_name, "h2");
        assert_eq!(board.iter().map(|r| r.model_index).collect::<Vec<_>>(), vec![1, 2, 0]);
    }
}
