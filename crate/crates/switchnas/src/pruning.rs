//! Iterative expert pruning.
//!
//! Usage of every expert is counted over the validation split (top-1: each
//! token increments exactly one counter). Each iteration removes the single
//! least-used active expert across all layers — never a layer's last one —
//! by flipping its router mask: the masked logit drops out of the softmax,
//! so its tokens fall through to the next-best active expert with exactly
//! renormalized gates. The loop stops when a metric threshold is breached
//! (the breaching prune is rolled back from a checkpoint, bit-exactly),
//! when nothing prunable remains, or at the iteration cap.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{PruneError, Result};
use crate::metrics::{compute_report, MetricConfig, MetricReport};
use crate::model::{checkpoint, MoEModel};
use crate::numerics::Tape;
use crate::rng::derive_seed;
use crate::train::{train_model, TrainConfig};

/// Routing counts per (layer, expert) accumulated over a dataset pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertUsageStats {
    /// counts[layer][expert]
    pub counts: Vec<Vec<u64>>,
    pub total_tokens: Vec<u64>,
}

/// Count every token's expert choice over a split.
pub fn collect_usage(model: &MoEModel, split: &Split, batch_size: usize) -> Result<ExpertUsageStats> {
    let mut counts: Vec<Vec<u64>> = model
        .blocks
        .iter()
        .map(|b| vec![0u64; b.switch.router.n_experts()])
        .collect();
    let mut total_tokens = vec![0u64; model.blocks.len()];

    let n = split.len();
    let image_len = model.config.image_len();
    let mut start = 0;
    while start < n {
        let bsz = batch_size.min(n - start);
        let tape = Tape::inference();
        let out = model.forward(&tape, &split.images[start * image_len..(start + bsz) * image_len], bsz)?;
        for (layer, choices) in out.token_choices.iter().enumerate() {
            total_tokens[layer] += choices.len() as u64;
            for &c in choices {
                counts[layer][c] += 1;
            }
        }
        start += bsz;
    }
    Ok(ExpertUsageStats { counts, total_tokens })
}

/// The globally least-used active expert among layers that still have at
/// least two active experts. Ties break to the lower layer, then the lower
/// expert index. `None` means nothing is prunable.
pub fn select_prune_target(stats: &ExpertUsageStats, masks: &[Vec<bool>]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, u64)> = None;
    for (layer, mask) in masks.iter().enumerate() {
        if mask.iter().filter(|&&a| a).count() < 2 {
            continue;
        }
        for (expert, &active) in mask.iter().enumerate() {
            if !active {
                continue;
            }
            let c = stats.counts[layer][expert];
            let better = match best {
                None => true,
                Some((_, _, bc)) => c < bc,
            };
            if better {
                best = Some((layer, expert, c));
            }
        }
    }
    best.map(|(l, e, _)| (l, e))
}

/// Mask one expert off. Contract error if it is inactive already or the last
/// active expert of its layer.
pub fn prune_expert(model: &mut MoEModel, layer: usize, expert: usize) -> Result<()> {
    let router = &mut model.blocks[layer].switch.router;
    if !router.active[expert] {
        return Err(PruneError::AlreadyPruned { layer, expert }.into());
    }
    if router.n_active() < 2 {
        return Err(PruneError::LastExpert { layer, expert }.into());
    }
    router.active[expert] = false;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneThresholds {
    /// Stop when test accuracy falls more than this below the unpruned model.
    pub max_acc_drop: f64,
    /// Fairness floor; `None` defaults to the unpruned fairness minus a
    /// mode-dependent band (0.05 in mean-SPD units, 0.5 in sum units — the
    /// same group-accuracy tolerance expressed on either scale).
    pub min_fairness: Option<f64>,
    pub max_iterations: usize,
    /// Optional recovery fine-tune after each prune (0 = off).
    pub recovery_epochs: usize,
}

impl Default for PruneThresholds {
    fn default() -> Self {
        PruneThresholds { max_acc_drop: 0.02, min_fairness: None, max_iterations: 32, recovery_epochs: 0 }
    }
}

impl PruneThresholds {
    pub fn validate(&self) -> Result<()> {
        if !self.max_acc_drop.is_finite() {
            return Err(PruneError::BadThresholds("max_acc_drop must be finite".into()).into());
        }
        Ok(())
    }
}

/// One accepted pruning step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneLogEntry {
    pub iteration: usize,
    pub layer: usize,
    pub expert: usize,
    pub param_count: u64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIterations,
    NothingToPrune,
    AccuracyBreach { test_accuracy: f64, floor: f64 },
    FairnessBreach { fairness: f64, floor: f64 },
}

/// The full pruning trajectory: the unpruned baseline plus every accepted
/// step. A step that breached a threshold is rolled back and reported via
/// `stop`/`rolled_back`, not logged as an entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneLog {
    pub baseline_param_count: u64,
    pub baseline: MetricReport,
    pub entries: Vec<PruneLogEntry>,
    pub stop: StopReason,
    pub rolled_back: Option<(usize, usize)>,
}

pub const PRUNE_CSV_HEADER: &str = "iteration,layer,expert,param_count,test_acc,fairness,robustness";

impl PruneLog {
    /// The iteration series as CSV (baseline row has no prune target).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(PRUNE_CSV_HEADER);
        out.push('\n');
        out.push_str(&format!(
            "0,,,{},{:.6},{:.6},{:.6}\n",
            self.baseline_param_count,
            self.baseline.test_accuracy,
            self.baseline.fairness_score,
            self.baseline.robustness
        ));
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                e.iteration,
                e.layer,
                e.expert,
                e.param_count,
                e.report.test_accuracy,
                e.report.fairness_score,
                e.report.robustness
            ));
        }
        out
    }
}

/// Configuration for [`prune_loop`].
pub struct PruneContext<'a> {
    pub dataset: &'a Dataset,
    pub thresholds: PruneThresholds,
    pub metric: MetricConfig,
    /// Used only when `thresholds.recovery_epochs > 0`.
    pub recovery_train: TrainConfig,
    pub seed: u64,
}

/// Run collect → select → prune → evaluate until a stop condition.
pub fn prune_loop(model: &mut MoEModel, ctx: &PruneContext<'_>) -> Result<PruneLog> {
    ctx.thresholds.validate()?;
    let baseline = compute_report(model, ctx.dataset, &ctx.metric)?;
    let acc_floor = baseline.test_accuracy - ctx.thresholds.max_acc_drop;
    let default_band = match ctx.metric.spd_mode {
        crate::metrics::SpdMode::Mean => 0.05,
        crate::metrics::SpdMode::Sum => 0.5,
    };
    let fairness_floor =
        ctx.thresholds.min_fairness.unwrap_or(baseline.fairness_score - default_band);

    let mut log = PruneLog {
        baseline_param_count: model.param_count(),
        baseline,
        entries: Vec::new(),
        stop: StopReason::MaxIterations,
        rolled_back: None,
    };

    for iteration in 1..=ctx.thresholds.max_iterations {
        let stats = collect_usage(model, &ctx.dataset.val, ctx.metric.batch_size)?;
        let Some((layer, expert)) = select_prune_target(&stats, &model.active_masks()) else {
            log.stop = StopReason::NothingToPrune;
            return Ok(log);
        };
        let pre_prune = checkpoint::save_checkpoint(model);
        prune_expert(model, layer, expert)?;
        if ctx.thresholds.recovery_epochs > 0 {
            let cfg = TrainConfig {
                epochs: ctx.thresholds.recovery_epochs,
                seed: derive_seed(ctx.seed, &format!("recovery-{iteration}")),
                ..ctx.recovery_train.clone()
            };
            train_model(model, &ctx.dataset.train, &cfg)?;
        }
        let report = compute_report(model, ctx.dataset, &ctx.metric)?;

        let acc_breach = report.test_accuracy < acc_floor;
        let fairness_breach = report.fairness_score < fairness_floor;
        if acc_breach || fairness_breach {
            *model = checkpoint::load_checkpoint(&pre_prune)?;
            log.rolled_back = Some((layer, expert));
            log.stop = if acc_breach {
                StopReason::AccuracyBreach { test_accuracy: report.test_accuracy, floor: acc_floor }
            } else {
                StopReason::FairnessBreach { fairness: report.fairness_score, floor: fairness_floor }
            };
            return Ok(log);
        }
        let param_count = model.param_count();
        debug_assert!(
            log.entries.last().map_or(param_count < log.baseline_param_count, |e| param_count < e.param_count)
        );
        log.entries.push(PruneLogEntry { iteration, layer, expert, param_count, report });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};
    use crate::model::{ArchitectureEncoding, Expert, ModelConfig, MoEModel};
    use crate::numerics::Tensor;
    use crate::rng::Rng;

    fn model_with(counts: &[usize], seed: u64) -> MoEModel {
        MoEModel::new(ModelConfig::tiny(), ArchitectureEncoding::new(counts.to_vec()).unwrap(), seed)
            .unwrap()
    }

    fn stats(counts: Vec<Vec<u64>>) -> ExpertUsageStats {
        let total_tokens = counts.iter().map(|l| l.iter().sum()).collect();
        ExpertUsageStats { counts, total_tokens }
    }

    #[test]
    fn usage_counts_conserve_tokens() {
        let ds = generate(&DatasetSpec { train_count: 32, val_count: 64, test_count: 32, seed: 3, ..Default::default() }).unwrap();
        let model = model_with(&[3, 1, 4], 2);
        let usage = collect_usage(&model, &ds.val, 50).unwrap();
        let tokens_expected = (ds.val.len() * model.config.n_tokens()) as u64;
        for (layer, layer_counts) in usage.counts.iter().enumerate() {
            assert_eq!(usage.total_tokens[layer], tokens_expected);
            assert_eq!(layer_counts.iter().sum::<u64>(), tokens_expected);
        }
        // Single-expert layer: that expert took everything.
        assert_eq!(usage.counts[1], vec![tokens_expected]);
    }

    #[test]
    fn symmetric_router_sends_every_token_to_expert_zero() {
        let ds = generate(&DatasetSpec { train_count: 32, val_count: 32, test_count: 32, seed: 4, ..Default::default() }).unwrap();
        let model = model_with(&[2, 1, 1], 5);
        // Zero router weights: identical logits, tie-break to index 0.
        let r = &model.blocks[0].switch.router;
        r.weight.set_data(&vec![0.0; r.weight.numel()]);
        r.bias.set_data(&vec![0.0; r.bias.numel()]);
        let usage = collect_usage(&model, &ds.val, 50).unwrap();
        assert_eq!(usage.counts[0][0], usage.total_tokens[0]);
        assert_eq!(usage.counts[0][1], 0);
    }

    #[test]
    fn usage_matches_per_token_route_replay() {
        // Layer-level replay oracle: feed a raw token matrix through one
        // switch layer and recount choices with the pure route() path.
        let mut rng = Rng::new(6);
        let model = model_with(&[4, 2, 3], 7);
        let layer = &model.blocks[0].switch;
        let d = model.config.d_model;
        let tokens = Tensor::randn(&[64, d], 1.0, &mut rng);
        let out = layer.forward(&Tape::inference(), &tokens).unwrap();
        let mut replay = vec![0u64; layer.router.n_experts()];
        let td = tokens.to_vec();
        for r in 0..64 {
            let decision = layer.router.route(&td[r * d..(r + 1) * d]).unwrap();
            replay[decision.expert] += 1;
        }
        let mut counted = vec![0u64; layer.router.n_experts()];
        for &c in &out.choices {
            counted[c] += 1;
        }
        assert_eq!(counted, replay);
    }

    #[test]
    fn select_target_boundaries() {
        // All layers at one expert: nothing to prune.
        let masks = vec![vec![true], vec![true]];
        assert_eq!(select_prune_target(&stats(vec![vec![10], vec![20]]), &masks), None);

        // Unique zero-count expert in a multi-expert layer is selected.
        let masks = vec![vec![true, true], vec![true]];
        let s = stats(vec![vec![64, 0], vec![64]]);
        assert_eq!(select_prune_target(&s, &masks), Some((0, 1)));

        // The single-expert layer's count never wins even when smallest.
        let masks = vec![vec![true], vec![true, true]];
        let s = stats(vec![vec![1], vec![50, 14]]);
        assert_eq!(select_prune_target(&s, &masks), Some((1, 1)));
    }

    #[test]
    fn select_target_matches_exhaustive_oracle() {
        let mut rng = Rng::new(8);
        for round in 0..200 {
            let n_layers = 1 + rng.below(4);
            let masks: Vec<Vec<bool>> = (0..n_layers)
                .map(|_| {
                    let e = 1 + rng.below(5);
                    (0..e).map(|_| rng.below(4) != 0).collect::<Vec<bool>>()
                })
                .map(|mut m| {
                    if !m.iter().any(|&a| a) {
                        m[0] = true;
                    }
                    m
                })
                .collect();
            let counts: Vec<Vec<u64>> = masks
                .iter()
                .map(|m| (0..m.len()).map(|_| rng.below(5) as u64).collect())
                .collect();
            let s = stats(counts.clone());

            // Exhaustive oracle under the tie rule.
            let mut want: Option<(usize, usize)> = None;
            let mut want_count = u64::MAX;
            for (l, m) in masks.iter().enumerate() {
                if m.iter().filter(|&&a| a).count() < 2 {
                    continue;
                }
                for (e, &a) in m.iter().enumerate() {
                    if a && counts[l][e] < want_count {
                        want = Some((l, e));
                        want_count = counts[l][e];
                    }
                }
            }
            assert_eq!(select_prune_target(&s, &masks), want, "round {round}");
        }
    }

    #[test]
    fn pruning_a_dead_expert_is_bit_exact() {
        // An expert whose router column is hugely negative gets probability
        // that underflows to exactly zero: pruning it cannot change outputs.
        let ds = generate(&DatasetSpec { train_count: 32, val_count: 64, test_count: 64, seed: 9, ..Default::default() }).unwrap();
        let mut model = model_with(&[3, 2, 2], 10);
        let router = &model.blocks[0].switch.router;
        let e = router.n_experts();
        let mut w = router.weight.to_vec();
        let mut b = router.bias.to_vec();
        for row in 0..model.config.d_model {
            w[row * e + 1] = 0.0;
        }
        b[1] = -1e4;
        router.weight.set_data(&w);
        router.bias.set_data(&b);

        let usage = collect_usage(&model, &ds.val, 50).unwrap();
        assert_eq!(usage.counts[0][1], 0, "expert must be provably unused");

        let image_len = model.config.image_len();
        let before = model.forward(&Tape::inference(), &ds.val.images[..8 * image_len], 8).unwrap();
        let preds_before = model.predict(&ds.val.images, ds.val.len(), 50).unwrap();
        prune_expert(&mut model, 0, 1).unwrap();
        let after = model.forward(&Tape::inference(), &ds.val.images[..8 * image_len], 8).unwrap();
        let preds_after = model.predict(&ds.val.images, ds.val.len(), 50).unwrap();

        let (a, b) = (before.logits.to_vec(), after.logits.to_vec());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(preds_before, preds_after);
    }

    #[test]
    fn pruned_argmax_falls_through_to_next_best() {
        let mut rng = Rng::new(11);
        let mut model = model_with(&[4, 1, 1], 12);
        let d = model.config.d_model;
        let token: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let first = model.blocks[0].switch.router.route(&token).unwrap();
        let mut ranked: Vec<usize> = (0..4).collect();
        ranked.sort_by(|&a, &b| {
            first.distribution[b].partial_cmp(&first.distribution[a]).unwrap().then(a.cmp(&b))
        });
        assert_eq!(ranked[0], first.expert);

        prune_expert(&mut model, 0, first.expert).unwrap();
        let second = model.blocks[0].switch.router.route(&token).unwrap();
        assert_eq!(second.expert, ranked[1], "token must move to its second-best expert");
        // Renormalized gate equals the oracle ratio.
        let denom = 1.0 - first.distribution[first.expert];
        let want = first.distribution[ranked[1]] / denom;
        assert!((second.gate - want).abs() < 1e-12);
    }

    #[test]
    fn post_prune_forward_equals_reconstructed_smaller_model() {
        let mut rng = Rng::new(13);
        let mut model = model_with(&[3, 2, 2], 14);
        let victim = 1usize;
        prune_expert(&mut model, 0, victim).unwrap();

        // Fresh model holding only the surviving experts, weights copied.
        let mut rebuilt = model_with(&[2, 2, 2], 99);
        let copy = |dst: &Tensor, src: &Tensor| dst.set_data(&src.to_vec());
        for (db, sb) in rebuilt.blocks.iter_mut().zip(&model.blocks) {
            copy(&db.ln1_gamma, &sb.ln1_gamma);
            copy(&db.ln1_beta, &sb.ln1_beta);
            copy(&db.wq, &sb.wq);
            copy(&db.bq, &sb.bq);
            copy(&db.wk, &sb.wk);
            copy(&db.bk, &sb.bk);
            copy(&db.wv, &sb.wv);
            copy(&db.bv, &sb.bv);
            copy(&db.wo, &sb.wo);
            copy(&db.bo, &sb.bo);
            copy(&db.ln2_gamma, &sb.ln2_gamma);
            copy(&db.ln2_beta, &sb.ln2_beta);
            let sr = &sb.switch.router;
            let keep: Vec<usize> = (0..sr.n_experts()).filter(|&e| sr.active[e]).collect();
            let e_src = sr.n_experts();
            let (sw, ss) = (sr.weight.to_vec(), sr.bias.to_vec());
            let d = sw.len() / e_src;
            let mut wnew = Vec::with_capacity(d * keep.len());
            for row in 0..d {
                for &e in &keep {
                    wnew.push(sw[row * e_src + e]);
                }
            }
            db.switch.router.weight.set_data(&wnew);
            db.switch.router.bias.set_data(&keep.iter().map(|&e| ss[e]).collect::<Vec<_>>());
            for (slot, &e) in keep.iter().enumerate() {
                let (dste, srce): (&Expert, &Expert) = (&db.switch.experts[slot], &sb.switch.experts[e]);
                copy(&dste.w1, &srce.w1);
                copy(&dste.b1, &srce.b1);
                copy(&dste.w2, &srce.w2);
                copy(&dste.b2, &srce.b2);
            }
        }
        copy(&rebuilt.patch_weight, &model.patch_weight);
        copy(&rebuilt.patch_bias, &model.patch_bias);
        copy(&rebuilt.pos_embed, &model.pos_embed);
        copy(&rebuilt.final_ln_gamma, &model.final_ln_gamma);
        copy(&rebuilt.final_ln_beta, &model.final_ln_beta);
        copy(&rebuilt.head_weight, &model.head_weight);
        copy(&rebuilt.head_bias, &model.head_bias);

        let images: Vec<f64> = (0..6 * model.config.image_len()).map(|_| rng.next_f64()).collect();
        let a = model.forward(&Tape::inference(), &images, 6).unwrap();
        let b = rebuilt.forward(&Tape::inference(), &images, 6).unwrap();
        let (av, bv) = (a.logits.to_vec(), b.logits.to_vec());
        assert!(av.iter().zip(&bv).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(model.param_count(), rebuilt.param_count());
    }

    #[test]
    fn prune_contract_errors() {
        let mut model = model_with(&[2, 1, 1], 15);
        // Last expert of a single-expert layer.
        let err = prune_expert(&mut model, 1, 0).unwrap_err().to_string();
        assert!(err.contains("last active"), "{err}");
        // Double prune.
        prune_expert(&mut model, 0, 0).unwrap();
        let err = prune_expert(&mut model, 0, 0).unwrap_err().to_string();
        assert!(err.contains("already inactive"), "{err}");
        // Now expert 1 is the last one of layer 0.
        let err = prune_expert(&mut model, 0, 1).unwrap_err().to_string();
        assert!(err.contains("last active"), "{err}");
    }

    fn tiny_ctx(ds: &Dataset, thresholds: PruneThresholds) -> PruneContext<'_> {
        PruneContext {
            dataset: ds,
            thresholds,
            metric: MetricConfig { batch_size: 64, ..Default::default() },
            recovery_train: TrainConfig::default(),
            seed: 0,
        }
    }

    #[test]
    fn impossible_thresholds_leave_only_the_baseline() {
        let ds = generate(&DatasetSpec { train_count: 64, val_count: 64, test_count: 64, seed: 16, ..Default::default() }).unwrap();
        let mut model = model_with(&[2, 2, 1], 17);
        let before = checkpoint::save_checkpoint(&model);
        // Any accuracy change at all is a breach.
        let log = prune_loop(
            &mut model,
            &tiny_ctx(&ds, PruneThresholds { max_acc_drop: -1.0, ..Default::default() }),
        )
        .unwrap();
        assert!(log.entries.is_empty());
        assert!(log.rolled_back.is_some());
        assert!(matches!(log.stop, StopReason::AccuracyBreach { .. }));
        // Rollback restored the exact pre-prune bytes.
        assert_eq!(checkpoint::save_checkpoint(&model), before);
    }

    #[test]
    fn all_single_expert_model_has_nothing_to_prune() {
        let ds = generate(&DatasetSpec { train_count: 64, val_count: 64, test_count: 64, seed: 18, ..Default::default() }).unwrap();
        let mut model = model_with(&[1, 1, 1], 19);
        let log = prune_loop(&mut model, &tiny_ctx(&ds, PruneThresholds::default())).unwrap();
        assert!(log.entries.is_empty());
        assert_eq!(log.stop, StopReason::NothingToPrune);
    }

    #[test]
    fn accepted_prunes_shrink_params_monotonically() {
        let ds = generate(&DatasetSpec { train_count: 64, val_count: 64, test_count: 64, seed: 20, ..Default::default() }).unwrap();
        let mut model = model_with(&[4, 3, 2], 21);
        // Thresholds loose enough to admit every prune down to the floor.
        let log = prune_loop(
            &mut model,
            &tiny_ctx(
                &ds,
                PruneThresholds { max_acc_drop: 1.0, min_fairness: Some(f64::NEG_INFINITY), max_iterations: 32, recovery_epochs: 0 },
            ),
        )
        .unwrap();
        assert_eq!(log.stop, StopReason::NothingToPrune);
        assert_eq!(log.entries.len(), 6); // down to one expert per layer
        let mut prev = log.baseline_param_count;
        for e in &log.entries {
            assert!(e.param_count < prev);
            prev = e.param_count;
        }
        assert_eq!(model.active_encoding().expert_counts(), &[1, 1, 1]);
        let csv = log.to_csv();
        assert_eq!(csv.lines().count(), 1 + 1 + 6);
        assert!(csv.starts_with(PRUNE_CSV_HEADER));
    }
}
