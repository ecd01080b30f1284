//! Multi-objective architecture search over per-layer expert counts.
//!
//! The loop is population-based surrogate-guided optimization: evaluate a
//! seeded population (every evaluation trains a model and measures the four
//! objectives), fit one gradient-boosted-tree surrogate per objective, then
//! repeatedly propose candidates by mutating archive members — parents drawn
//! in proportion to their non-dominated rank — and keep the candidates whose
//! *predicted* objectives are non-dominated, breaking ties by random-weight
//! scalarization. Model size acts as a hard constraint: encodings outside
//! `[min_params, max_params]` are never evaluated.
//!
//! All four objectives are maximized; the generalization objective is stored
//! as `neg_overfitting` so the directions agree. Evaluations are
//! embarrassingly parallel across a worker pool; results commit in proposal
//! order, so the archive is identical whatever the worker count. Every
//! per-phase random stream is derived from the seed and the iteration
//! number, which makes a resumed run replay exactly.

pub mod pareto;
pub mod surrogate;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, SearchError};
use crate::metrics::{compute_report, MetricConfig, MetricReport};
use crate::model::{checkpoint, count_params, ArchitectureEncoding, ModelConfig};
use crate::rng::{derive_seed, Rng};
use crate::train::{train_new_model, TrainConfig};
use pareto::{non_dominated_ranks, pareto_front_indices};
use surrogate::{GradientBoostedTrees, SurrogateConfig};

/// The four maximized objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub test_accuracy: f64,
    pub fairness: f64,
    pub robustness: f64,
    /// Negated val−test gap, so that larger is better like the rest.
    pub neg_overfitting: f64,
}

impl Objectives {
    pub fn from_report(report: &MetricReport) -> Objectives {
        Objectives {
            test_accuracy: report.test_accuracy,
            fairness: report.fairness_score,
            robustness: report.robustness,
            neg_overfitting: -report.overfitting,
        }
    }

    pub fn vector(&self) -> [f64; 4] {
        [self.test_accuracy, self.fairness, self.robustness, self.neg_overfitting]
    }

    pub fn all_finite(&self) -> bool {
        self.vector().iter().all(|v| v.is_finite())
    }
}

/// One completed evaluation: an architecture and its measured objectives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub model_id: String,
    pub encoding: ArchitectureEncoding,
    pub objectives: Objectives,
    pub param_count: u64,
    pub train_seed: u64,
    pub wall_time_s: f64,
    pub report: MetricReport,
}

/// An evaluation that diverged; excluded from surrogates and the front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedEvaluation {
    pub model_id: String,
    pub encoding: ArchitectureEncoding,
    pub reason: String,
}

/// Per-layer bounds of the encoding space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_layers: usize,
    pub max_experts: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { n_layers: 9, max_experts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub seed: u64,
    pub initial_population: usize,
    pub iterations: usize,
    pub n_candidates: usize,
    pub n_select: usize,
    pub workers: usize,
    /// Hard size constraint; `None` defaults to 1.0×/2.5× the all-ones count.
    pub min_params: Option<u64>,
    pub max_params: Option<u64>,
    /// Add the surrogate tree-disagreement to predicted objectives.
    pub exploration_bonus: bool,
    pub space: SearchSpace,
    pub model: ModelConfig,
    /// Per-evaluation training; its `seed` field is ignored (seeds are
    /// derived per encoding from the search seed).
    pub train: TrainConfig,
    pub metric: MetricConfig,
    pub surrogate: SurrogateConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seed: 0,
            initial_population: 16,
            iterations: 10,
            n_candidates: 64,
            n_select: 4,
            workers: 4,
            min_params: None,
            max_params: None,
            exploration_bonus: false,
            space: SearchSpace::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metric: MetricConfig::default(),
            surrogate: SurrogateConfig::default(),
        }
    }
}

impl SearchConfig {
    /// Everything that must match between a resumed state and the caller's
    /// config (budget and worker count may differ).
    fn resume_signature(&self) -> SearchConfig {
        SearchConfig { iterations: 0, workers: 0, ..self.clone() }
    }
}

/// Resolved hard parameter-count bounds.
pub fn resolve_bounds(cfg: &SearchConfig) -> (u64, u64) {
    let floor = count_params(&ArchitectureEncoding::all_ones(cfg.space.n_layers), &cfg.model);
    let min = cfg.min_params.unwrap_or(floor);
    let max = cfg.max_params.unwrap_or((floor as f64 * 2.5) as u64);
    (min, max)
}

const SAMPLE_RETRIES: usize = 10_000;

/// Reachable count interval of the whole space.
fn reachable_counts(cfg: &SearchConfig) -> (u64, u64) {
    let lo = count_params(&ArchitectureEncoding::all_ones(cfg.space.n_layers), &cfg.model);
    let hi = count_params(
        &ArchitectureEncoding::uniform(cfg.space.n_layers, cfg.space.max_experts).unwrap(),
        &cfg.model,
    );
    (lo, hi)
}

/// Uniform per-layer draw, rejection-resampled until the size constraint
/// holds.
pub fn sample_encoding(rng: &mut Rng, cfg: &SearchConfig, bounds: (u64, u64)) -> Result<ArchitectureEncoding> {
    let (lo, hi) = reachable_counts(cfg);
    if bounds.1 < lo || bounds.0 > hi {
        return Err(SearchError::InfeasibleBounds {
            min_params: bounds.0,
            max_params: bounds.1,
            lo,
            hi,
        }
        .into());
    }
    for _ in 0..SAMPLE_RETRIES {
        let counts: Vec<usize> =
            (0..cfg.space.n_layers).map(|_| 1 + rng.below(cfg.space.max_experts)).collect();
        let enc = ArchitectureEncoding::new(counts)?;
        let p = count_params(&enc, &cfg.model);
        if p >= bounds.0 && p <= bounds.1 {
            return Ok(enc);
        }
    }
    Err(SearchError::SamplingExhausted { retries: SAMPLE_RETRIES }.into())
}

const MUTATE_RETRIES: usize = 1_000;

/// Resample one uniformly chosen layer's expert count to a different value;
/// retried until the child satisfies the size constraint.
pub fn mutate(
    rng: &mut Rng,
    parent: &ArchitectureEncoding,
    cfg: &SearchConfig,
    bounds: (u64, u64),
) -> Result<ArchitectureEncoding> {
    for _ in 0..MUTATE_RETRIES {
        let layer = rng.below(parent.len());
        let current = parent.expert_counts()[layer];
        if cfg.space.max_experts < 2 {
            return Err(SearchError::SamplingExhausted { retries: 0 }.into());
        }
        // Uniform over [1, max] \ {current}.
        let mut new = 1 + rng.below(cfg.space.max_experts - 1);
        if new >= current {
            new += 1;
        }
        let mut counts = parent.expert_counts().to_vec();
        counts[layer] = new;
        let child = ArchitectureEncoding::new(counts)?;
        let p = count_params(&child, &cfg.model);
        if p >= bounds.0 && p <= bounds.1 {
            return Ok(child);
        }
    }
    Err(SearchError::SamplingExhausted { retries: MUTATE_RETRIES }.into())
}

fn features(encoding: &ArchitectureEncoding) -> Vec<f64> {
    encoding.expert_counts().iter().map(|&e| e as f64).collect()
}

/// Fit one surrogate per objective on the non-failed archive.
pub fn fit_surrogates(archive: &[EvaluationRecord], cfg: &SurrogateConfig) -> Result<[GradientBoostedTrees; 4]> {
    let xs: Vec<Vec<f64>> = archive.iter().map(|r| features(&r.encoding)).collect();
    let fit = |pick: fn(&Objectives) -> f64| -> Result<GradientBoostedTrees> {
        let ys: Vec<f64> = archive.iter().map(|r| pick(&r.objectives)).collect();
        GradientBoostedTrees::fit(&xs, &ys, cfg)
    };
    Ok([
        fit(|o| o.test_accuracy)?,
        fit(|o| o.fairness)?,
        fit(|o| o.robustness)?,
        fit(|o| o.neg_overfitting)?,
    ])
}

/// Outcome of a proposal round.
#[derive(Debug)]
pub enum Proposal {
    Candidates(Vec<ArchitectureEncoding>),
    /// No unseen encoding could be generated: the space is saturated.
    Exhausted,
}

/// Generate and rank candidates against the surrogates.
pub fn propose(
    archive: &[EvaluationRecord],
    surrogates: &[GradientBoostedTrees; 4],
    rng: &mut Rng,
    cfg: &SearchConfig,
    bounds: (u64, u64),
) -> Result<Proposal> {
    let objective_rows: Vec<[f64; 4]> = archive.iter().map(|r| r.objectives.vector()).collect();
    let ranks = non_dominated_ranks(&objective_rows);
    let weights: Vec<f64> = ranks.iter().map(|&r| 1.0 / (1.0 + r as f64)).collect();
    let total: f64 = weights.iter().sum();

    let pick_parent = |rng: &mut Rng| -> usize {
        let mut target = rng.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    };

    let seen: std::collections::HashSet<&ArchitectureEncoding> =
        archive.iter().map(|r| &r.encoding).collect();
    let mut candidates: Vec<ArchitectureEncoding> = Vec::new();
    let mut attempts = 0;
    while candidates.len() < cfg.n_candidates && attempts < 200 * cfg.n_candidates {
        attempts += 1;
        let parent = &archive[pick_parent(rng)].encoding;
        let Ok(child) = mutate(rng, parent, cfg, bounds) else { continue };
        if !seen.contains(&child) && !candidates.contains(&child) {
            candidates.push(child);
        }
    }
    if candidates.is_empty() {
        return Ok(Proposal::Exhausted);
    }

    let predicted: Vec<[f64; 4]> = candidates
        .iter()
        .map(|c| {
            let x = features(c);
            let mut row = [0.0; 4];
            for (k, s) in surrogates.iter().enumerate() {
                row[k] = s.predict(&x);
                if cfg.exploration_bonus {
                    row[k] += s.tree_disagreement(&x);
                }
            }
            row
        })
        .collect();

    Ok(Proposal::Candidates(select_by_predicted(candidates, &predicted, cfg.n_select, rng)))
}

/// Predicted non-dominated sorting with random-weight scalarization inside
/// the cut front.
fn select_by_predicted(
    candidates: Vec<ArchitectureEncoding>,
    predicted: &[[f64; 4]],
    n_select: usize,
    rng: &mut Rng,
) -> Vec<ArchitectureEncoding> {
    let ranks = non_dominated_ranks(predicted);
    let max_rank = ranks.iter().copied().max().unwrap_or(0);
    let mut chosen: Vec<usize> = Vec::with_capacity(n_select);
    for rank in 0..=max_rank {
        if chosen.len() >= n_select {
            break;
        }
        let mut front: Vec<usize> = (0..candidates.len()).filter(|&i| ranks[i] == rank).collect();
        if chosen.len() + front.len() > n_select {
            // Scalarize with random positive weights to cut the front.
            let mut w = [0.0f64; 4];
            for v in w.iter_mut() {
                *v = -rng.next_f64().max(1e-12).ln();
            }
            let s: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= s;
            }
            front.sort_by(|&a, &b| {
                let sa: f64 = predicted[a].iter().zip(&w).map(|(o, wi)| o * wi).sum();
                let sb: f64 = predicted[b].iter().zip(&w).map(|(o, wi)| o * wi).sum();
                sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
            });
            front.truncate(n_select - chosen.len());
        }
        chosen.extend(front);
    }
    chosen.into_iter().map(|i| candidates[i].clone()).collect()
}

/// Train one architecture and measure it. Returns the record plus the
/// trained model's checkpoint bytes.
pub fn evaluate(
    encoding: &ArchitectureEncoding,
    dataset: &Dataset,
    cfg: &SearchConfig,
    model_id: &str,
) -> Result<(EvaluationRecord, Vec<u8>)> {
    let bounds = resolve_bounds(cfg);
    let param_count = count_params(encoding, &cfg.model);
    if param_count < bounds.0 || param_count > bounds.1 {
        return Err(Error::Config(format!(
            "encoding {encoding} has {param_count} params, outside [{}, {}]",
            bounds.0, bounds.1
        )));
    }
    let train_seed = derive_seed(cfg.seed, &format!("train:{}", encoding.to_compact_string()));
    let start = std::time::Instant::now();
    let train_cfg = TrainConfig { seed: train_seed, ..cfg.train.clone() };
    let (model, _stats) =
        train_new_model(cfg.model.clone(), encoding.clone(), &dataset.train, &train_cfg).map_err(
            |e| match e {
                Error::Numerics(crate::error::NumericsError::NonFinite { context }) => {
                    Error::Search(SearchError::TrainingDiverged {
                        encoding: encoding.to_compact_string(),
                        context,
                    })
                }
                other => other,
            },
        )?;
    let report = compute_report(&model, dataset, &cfg.metric)?;
    let objectives = Objectives::from_report(&report);
    if !objectives.all_finite() {
        return Err(SearchError::TrainingDiverged {
            encoding: encoding.to_compact_string(),
            context: "non-finite objective".to_string(),
        }
        .into());
    }
    let record = EvaluationRecord {
        model_id: model_id.to_string(),
        encoding: encoding.clone(),
        objectives,
        param_count,
        train_seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        report,
    };
    Ok((record, checkpoint::save_checkpoint(&model)))
}

/// Evaluate a wave of encodings on up to `cfg.workers` threads. Results come
/// back in job order regardless of completion order.
fn evaluate_wave(
    jobs: &[(String, ArchitectureEncoding)],
    dataset: &Dataset,
    cfg: &SearchConfig,
) -> Vec<Result<(EvaluationRecord, Vec<u8>)>> {
    let workers = cfg.workers.max(1);
    let mut results = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(workers) {
        let mut chunk_results: Vec<Result<(EvaluationRecord, Vec<u8>)>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|(id, enc)| scope.spawn(move || evaluate(enc, dataset, cfg, id)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
            });
        results.append(&mut chunk_results);
    }
    results
}

/// Durable search state; everything needed to resume or report.
#[derive(Debug, Serialize, Deserialize)]
pub struct SearchState {
    pub config: SearchConfig,
    pub bounds: (u64, u64),
    /// Iterations fully committed (the initial population is iteration 0's
    /// prerequisite and is present whenever this struct exists).
    pub completed_iterations: usize,
    /// Encodings eligible as mutation parents (the full archive).
    pub population: Vec<ArchitectureEncoding>,
    pub archive: Vec<EvaluationRecord>,
    pub failed: Vec<FailedEvaluation>,
    next_model_index: usize,
    /// Set when proposal reported the space saturated.
    pub exhausted: bool,
}

impl SearchState {
    /// Non-dominated subset of the archive, in archive order.
    pub fn pareto_front(&self) -> Vec<&EvaluationRecord> {
        front_of(&self.archive)
    }
}

/// Non-dominated subset of a record slice, in input order.
pub fn front_of(records: &[EvaluationRecord]) -> Vec<&EvaluationRecord> {
    let rows: Vec<[f64; 4]> = records.iter().map(|r| r.objectives.vector()).collect();
    pareto_front_indices(&rows).into_iter().map(|i| &records[i]).collect()
}

pub fn save_state(state: &SearchState, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(state).expect("state serialization");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, &json).map_err(|e| Error::io(e, &tmp))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(e, path))
}

pub fn load_state(path: &Path) -> Result<SearchState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(e, path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn persist(state: &SearchState, out_dir: Option<&Path>) -> Result<()> {
    if let Some(dir) = out_dir {
        save_state(state, &dir.join("search_state.json"))?;
    }
    Ok(())
}

fn write_eval_checkpoint(out_dir: Option<&Path>, model_id: &str, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = out_dir {
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(e, &ckpt_dir))?;
        let path = ckpt_dir.join(format!("{model_id}.ckpt"));
        std::fs::write(&path, bytes).map_err(|e| Error::io(e, &path))?;
    }
    Ok(())
}

/// Run (or resume) the full search loop.
///
/// When `out_dir` is given, the state is checkpointed after the initial
/// population and after every iteration, and each evaluated model's
/// checkpoint lands under `out_dir/checkpoints/`.
pub fn run_search(
    cfg: &SearchConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    resume: Option<SearchState>,
) -> Result<SearchState> {
    let bounds = resolve_bounds(cfg);

    let mut state = match resume {
        Some(prev) => {
            if prev.config.resume_signature() != cfg.resume_signature() {
                return Err(SearchError::ResumeMismatch(
                    "config differs from the checkpointed run (only iterations/workers may change)"
                        .to_string(),
                )
                .into());
            }
            if prev.bounds != bounds {
                return Err(SearchError::ResumeMismatch(format!(
                    "bounds {:?} vs {:?}",
                    prev.bounds, bounds
                ))
                .into());
            }
            prev
        }
        None => {
            // Seed population: distinct constraint-satisfying encodings.
            let mut rng = Rng::derived(cfg.seed, "initial-population");
            let mut pop: Vec<ArchitectureEncoding> = Vec::with_capacity(cfg.initial_population);
            let mut attempts = 0;
            while pop.len() < cfg.initial_population {
                attempts += 1;
                if attempts > SAMPLE_RETRIES {
                    return Err(SearchError::SamplingExhausted { retries: SAMPLE_RETRIES }.into());
                }
                let enc = sample_encoding(&mut rng, cfg, bounds)?;
                if !pop.contains(&enc) {
                    pop.push(enc);
                }
            }
            let jobs: Vec<(String, ArchitectureEncoding)> = pop
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("m{i:03}"), e.clone()))
                .collect();
            let mut state = SearchState {
                config: cfg.clone(),
                bounds,
                completed_iterations: 0,
                population: Vec::new(),
                archive: Vec::new(),
                failed: Vec::new(),
                next_model_index: pop.len(),
                exhausted: false,
            };
            commit_wave(&mut state, evaluate_wave(&jobs, dataset, cfg), &jobs, out_dir)?;
            persist(&state, out_dir)?;
            state
        }
    };

    for iteration in state.completed_iterations..cfg.iterations {
        if state.exhausted {
            break;
        }
        let surrogates = fit_surrogates(&state.archive, &cfg.surrogate)?;
        let mut rng = Rng::derived(cfg.seed, &format!("iteration-{iteration}"));
        match propose(&state.archive, &surrogates, &mut rng, cfg, bounds)? {
            Proposal::Exhausted => {
                state.exhausted = true;
            }
            Proposal::Candidates(encodings) => {
                let jobs: Vec<(String, ArchitectureEncoding)> = encodings
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| (format!("m{:03}", state.next_model_index + i), e))
                    .collect();
                state.next_model_index += jobs.len();
                commit_wave(&mut state, evaluate_wave(&jobs, dataset, cfg), &jobs, out_dir)?;
            }
        }
        state.completed_iterations = iteration + 1;
        persist(&state, out_dir)?;
    }
    persist(&state, out_dir)?;
    Ok(state)
}

fn commit_wave(
    state: &mut SearchState,
    results: Vec<Result<(EvaluationRecord, Vec<u8>)>>,
    jobs: &[(String, ArchitectureEncoding)],
    out_dir: Option<&Path>,
) -> Result<()> {
    for (result, (model_id, encoding)) in results.into_iter().zip(jobs) {
        match result {
            Ok((record, ckpt)) => {
                debug_assert!(!state.archive.iter().any(|r| r.encoding == record.encoding));
                write_eval_checkpoint(out_dir, model_id, &ckpt)?;
                state.population.push(record.encoding.clone());
                state.archive.push(record);
            }
            Err(Error::Search(SearchError::TrainingDiverged { encoding: enc, context })) => {
                state.failed.push(FailedEvaluation {
                    model_id: model_id.clone(),
                    encoding: encoding.clone(),
                    reason: format!("diverged ({enc}): {context}"),
                });
            }
            Err(other) => return Err(other),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};
    use crate::metrics::{GroupAccuracies, SpdMode};

    fn tiny_search_config(seed: u64) -> SearchConfig {
        SearchConfig {
            seed,
            initial_population: 8,
            iterations: 1,
            n_candidates: 16,
            n_select: 2,
            workers: 2,
            space: SearchSpace { n_layers: 3, max_experts: 8 },
            model: ModelConfig::tiny(),
            train: TrainConfig { epochs: 1, ..Default::default() },
            ..Default::default()
        }
    }

    fn fake_record(id: usize, counts: &[usize], objs: [f64; 4]) -> EvaluationRecord {
        EvaluationRecord {
            model_id: format!("m{id:03}"),
            encoding: ArchitectureEncoding::new(counts.to_vec()).unwrap(),
            objectives: Objectives {
                test_accuracy: objs[0],
                fairness: objs[1],
                robustness: objs[2],
                neg_overfitting: objs[3],
            },
            param_count: 0,
            train_seed: 0,
            wall_time_s: 0.0,
            report: MetricReport {
                val_accuracy: objs[0],
                test_accuracy: objs[0],
                fairness_score: objs[1],
                spd: 0.0,
                spd_mode: SpdMode::Sum,
                beta: 0.2,
                robustness: objs[2],
                overfitting: -objs[3],
                light_threshold: 0.5,
                group_accuracies: GroupAccuracies {
                    acc: vec![objs[0]; 10],
                    counts: vec![1; 10],
                    minority_index: 10,
                },
            },
        }
    }

    #[test]
    fn full_range_bounds_accept_any_draw() {
        let cfg = tiny_search_config(1);
        let (lo, hi) = reachable_counts(&cfg);
        let mut rng = Rng::new(2);
        for _ in 0..100 {
            let enc = sample_encoding(&mut rng, &cfg, (lo, hi)).unwrap();
            let p = count_params(&enc, &cfg.model);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn impossible_bounds_are_an_infeasibility_error() {
        let cfg = tiny_search_config(1);
        let (lo, _hi) = reachable_counts(&cfg);
        let err = sample_encoding(&mut Rng::new(3), &cfg, (0, lo - 1)).unwrap_err();
        assert!(err.to_string().contains("no encoding fits"), "{err}");
    }

    #[test]
    fn wide_bound_draws_are_per_layer_uniform() {
        // Chi-squared test per layer over 1000 draws, 8 bins, df=7.
        // Critical value at alpha=0.001 is 24.32.
        let mut cfg = tiny_search_config(1);
        cfg.space = SearchSpace { n_layers: 9, max_experts: 8 };
        cfg.model = ModelConfig::default();
        let (lo, hi) = reachable_counts(&cfg);
        let mut rng = Rng::new(4);
        let n = 1000;
        let mut counts = vec![[0usize; 8]; 9];
        for _ in 0..n {
            let enc = sample_encoding(&mut rng, &cfg, (lo, hi)).unwrap();
            for (l, &e) in enc.expert_counts().iter().enumerate() {
                counts[l][e - 1] += 1;
            }
        }
        let expected = n as f64 / 8.0;
        for (l, layer_counts) in counts.iter().enumerate() {
            let chi2: f64 =
                layer_counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            assert!(chi2 < 24.32, "layer {l} chi2 {chi2}");
        }
    }

    #[test]
    fn forced_mutation_flips_the_single_entry() {
        let mut cfg = tiny_search_config(1);
        cfg.space = SearchSpace { n_layers: 1, max_experts: 2 };
        let (lo, hi) = reachable_counts(&cfg);
        let parent = ArchitectureEncoding::new(vec![1]).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let child = mutate(&mut rng, &parent, &cfg, (lo, hi)).unwrap();
            assert_eq!(child.expert_counts(), &[2]);
        }
    }

    #[test]
    fn mutation_changes_exactly_one_position() {
        let cfg = tiny_search_config(1);
        let (lo, hi) = reachable_counts(&cfg);
        let parent = ArchitectureEncoding::new(vec![3, 5, 1]).unwrap();
        let mut rng = Rng::new(6);
        for _ in 0..200 {
            let child = mutate(&mut rng, &parent, &cfg, (lo, hi)).unwrap();
            let diffs = parent
                .expert_counts()
                .iter()
                .zip(child.expert_counts())
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(diffs, 1);
        }
    }

    #[test]
    fn mutation_layer_choice_is_roughly_uniform() {
        let mut cfg = tiny_search_config(1);
        cfg.space = SearchSpace { n_layers: 9, max_experts: 8 };
        cfg.model = ModelConfig::default();
        let (lo, hi) = reachable_counts(&cfg);
        let parent = ArchitectureEncoding::new(vec![4; 9]).unwrap();
        let mut rng = Rng::new(7);
        let n = 1000;
        let mut layer_hits = [0usize; 9];
        for _ in 0..n {
            let child = mutate(&mut rng, &parent, &cfg, (lo, hi)).unwrap();
            let layer = parent
                .expert_counts()
                .iter()
                .zip(child.expert_counts())
                .position(|(a, b)| a != b)
                .unwrap();
            layer_hits[layer] += 1;
        }
        for (l, &hits) in layer_hits.iter().enumerate() {
            let frac = hits as f64 / n as f64;
            assert!((frac - 1.0 / 9.0).abs() < 0.035, "layer {l} selected {frac}");
        }
    }

    #[test]
    fn constant_objective_archive_predicts_the_constant() {
        let archive: Vec<EvaluationRecord> = (0..10)
            .map(|i| fake_record(i, &[1 + i % 8, 1, 1], [0.5, 0.5, 0.5, 0.5]))
            .collect();
        let surrogates = fit_surrogates(&archive, &SurrogateConfig::default()).unwrap();
        for s in &surrogates {
            assert!((s.predict(&[4.0, 4.0, 4.0]) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_space_saturation_terminates() {
        let mut cfg = tiny_search_config(1);
        cfg.space = SearchSpace { n_layers: 2, max_experts: 2 };
        let (lo, hi) = {
            let lo = count_params(&ArchitectureEncoding::all_ones(2), &cfg.model);
            let hi = count_params(&ArchitectureEncoding::uniform(2, 2).unwrap(), &cfg.model);
            (lo, hi)
        };
        // Archive covers the whole 2x2 space.
        let archive = vec![
            fake_record(0, &[1, 1], [0.1, 0.1, 0.1, 0.1]),
            fake_record(1, &[1, 2], [0.2, 0.2, 0.2, 0.2]),
            fake_record(2, &[2, 1], [0.3, 0.3, 0.3, 0.3]),
            fake_record(3, &[2, 2], [0.4, 0.4, 0.4, 0.4]),
            fake_record(4, &[1, 1], [0.1, 0.1, 0.1, 0.1]),
            fake_record(5, &[1, 2], [0.2, 0.2, 0.2, 0.2]),
            fake_record(6, &[2, 1], [0.3, 0.3, 0.3, 0.3]),
            fake_record(7, &[2, 2], [0.4, 0.4, 0.4, 0.4]),
        ];
        let surrogates = fit_surrogates(&archive, &SurrogateConfig::default()).unwrap();
        let mut rng = Rng::new(8);
        let proposal = propose(&archive, &surrogates, &mut rng, &cfg, (lo, hi)).unwrap();
        assert!(matches!(proposal, Proposal::Exhausted));
    }

    #[test]
    fn dominant_predicted_candidate_is_always_selected() {
        let candidates: Vec<ArchitectureEncoding> = (1..=5)
            .map(|i| ArchitectureEncoding::new(vec![i, 1, 1]).unwrap())
            .collect();
        let mut predicted = vec![[0.1, 0.1, 0.1, 0.1]; 5];
        predicted[3] = [0.9, 0.9, 0.9, 0.9]; // dominates everything
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let picked = select_by_predicted(candidates.clone(), &predicted, 2, &mut rng);
            assert!(picked.contains(&candidates[3]), "seed {seed}");
        }
    }

    #[test]
    fn proposal_is_reproducible_under_a_fixed_seed() {
        let archive: Vec<EvaluationRecord> = (0..12)
            .map(|i| {
                fake_record(
                    i,
                    &[1 + i % 8, 1 + (i * 3) % 8, 1 + (i * 5) % 8],
                    [0.5 + 0.01 * i as f64, 0.3, 0.4, -0.05],
                )
            })
            .collect();
        let cfg = tiny_search_config(1);
        let (lo, hi) = reachable_counts(&cfg);
        let surrogates = fit_surrogates(&archive, &SurrogateConfig::default()).unwrap();
        let run = || {
            let mut rng = Rng::derived(99, "proposal");
            match propose(&archive, &surrogates, &mut rng, &cfg, (lo, hi)).unwrap() {
                Proposal::Candidates(c) => c,
                Proposal::Exhausted => panic!("unexpected exhaustion"),
            }
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluation_is_deterministic_and_counts_params() {
        let ds = generate(&DatasetSpec {
            train_count: 96,
            val_count: 48,
            test_count: 96,
            seed: 31,
            ..Default::default()
        })
        .unwrap();
        let cfg = tiny_search_config(17);
        let enc = ArchitectureEncoding::new(vec![2, 1, 2]).unwrap();
        let (a, ckpt_a) = evaluate(&enc, &ds, &cfg, "m000").unwrap();
        let (b, ckpt_b) = evaluate(&enc, &ds, &cfg, "m000").unwrap();
        assert_eq!(a.objectives.vector(), b.objectives.vector());
        assert_eq!(ckpt_a, ckpt_b);
        assert_eq!(a.param_count, count_params(&enc, &cfg.model));
        // Range sanity: accuracies and robustness are rates; fairness has no
        // lower bound under sum-mode SPD but never exceeds 1.
        let o = a.objectives;
        assert!((0.0..=1.0).contains(&o.test_accuracy));
        assert!((0.0..=1.0).contains(&o.robustness));
        assert!((-1.0..=1.0).contains(&o.neg_overfitting));
        assert!(o.fairness <= 1.0 && o.fairness.is_finite());
    }

    #[test]
    fn zero_iterations_archive_is_the_initial_population() {
        let ds = generate(&DatasetSpec {
            train_count: 96,
            val_count: 48,
            test_count: 96,
            seed: 32,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = tiny_search_config(5);
        cfg.iterations = 0;
        cfg.initial_population = 4;
        let state = run_search(&cfg, &ds, None, None).unwrap();
        assert_eq!(state.archive.len() + state.failed.len(), 4);
        assert_eq!(state.completed_iterations, 0);
        // Uniqueness invariant.
        let mut encodings: Vec<_> = state.archive.iter().map(|r| &r.encoding).collect();
        encodings.dedup();
        assert_eq!(encodings.len(), state.archive.len());
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let ds = generate(&DatasetSpec {
            train_count: 96,
            val_count: 48,
            test_count: 96,
            seed: 33,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = tiny_search_config(11);
        cfg.initial_population = 8;
        cfg.n_select = 1;
        cfg.iterations = 2;

        let full = run_search(&cfg, &ds, None, None).unwrap();

        let mut half_cfg = cfg.clone();
        half_cfg.iterations = 1;
        let half = run_search(&half_cfg, &ds, None, None).unwrap();
        let mut resumed_state = half;
        resumed_state.config = cfg.clone(); // extend the budget
        let resumed = run_search(&cfg, &ds, None, Some(resumed_state)).unwrap();

        assert_eq!(full.archive.len(), resumed.archive.len());
        for (a, b) in full.archive.iter().zip(&resumed.archive) {
            assert_eq!(a.model_id, b.model_id);
            assert_eq!(a.encoding, b.encoding);
            assert_eq!(a.objectives.vector(), b.objectives.vector());
            assert_eq!(a.train_seed, b.train_seed);
        }
    }

    #[test]
    fn archive_never_violates_the_constraint_and_best_is_monotone() {
        let ds = generate(&DatasetSpec {
            train_count: 96,
            val_count: 48,
            test_count: 96,
            seed: 34,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = tiny_search_config(13);
        cfg.iterations = 2;
        cfg.n_select = 2;
        let state = run_search(&cfg, &ds, None, None).unwrap();
        for r in &state.archive {
            assert!(r.param_count >= state.bounds.0 && r.param_count <= state.bounds.1);
        }
        // No encoding is ever evaluated twice.
        let unique: std::collections::HashSet<_> =
            state.archive.iter().map(|r| r.encoding.clone()).collect();
        assert_eq!(unique.len(), state.archive.len());
        // Scalarized best over a growing archive is non-decreasing.
        let w = [0.25; 4];
        let mut best = f64::NEG_INFINITY;
        let mut prefix_best = Vec::new();
        for r in &state.archive {
            let s: f64 = r.objectives.vector().iter().zip(&w).map(|(o, wi)| o * wi).sum();
            best = best.max(s);
            prefix_best.push(best);
        }
        assert!(prefix_best.windows(2).all(|p| p[1] >= p[0]));
    }
}
