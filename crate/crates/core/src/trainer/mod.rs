//! Joint optimization: KGE warm-up with freeze, bidirectional denoising,
//! candidate-pool distillation, EMA maintenance, validation selection, and
//! checkpointing.
//!
//! One step runs two exclusive phases. Phase one scores the batch with the
//! retriever and applies the retriever update (while unfrozen); phase two
//! builds teacher pools from the just-updated retriever, trains the
//! denoiser on cross-entropy plus distillation, and refreshes the EMA
//! shadow. Per-element RNG streams are derived from (seed, epoch, index),
//! so worker fan-out consumes identical randomness in any order.

pub mod checkpoint;
pub mod config;

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    corrupt, denoise_logits_with_tape, assemble_input, DenoiserGrads, DenoiserParams,
    NoiseSchedule,
};
use crate::error::{RaddError, Result};
use crate::evalrank::{
    evaluate, AblationMode, EvalSettings, InferenceMode, MetricsReport,
};
use crate::kgdata::{Direction, KnowledgeGraph, ModalityFeatureStore, Query, Split, Triple};
use crate::numkernel::{
    ema_update, mlp_backward, softmax_ce, tempered_kl, AdamHyper, AdamState, content_hash,
};
use crate::retriever::{
    adversarial_weights, fuse_all, hard_negatives, kge_loss_terms, rank_margin_loss,
    sample_negatives, score_all_cached, FusedMatrix, RetrieverGrads, RetrieverParams, TriplePass,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DataMeta, ValPoint};
pub use config::TrainConfig;

/// Distillation candidates: the answer, KGE hard negatives, and uniform
/// random negatives, with the teacher's scores for each.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub ids: Vec<u32>,
    pub teacher_scores: Vec<f64>,
}

/// answer slot + ⌈hard_fraction·(pool_size−1)⌉ hard negatives + uniform
/// random fill, all distinct.
pub fn build_candidate_pool(
    scores: &[f64],
    answer: u32,
    pool_size: usize,
    hard_fraction: f64,
    rng: &mut impl Rng,
) -> Result<CandidatePool> {
    let n = scores.len();
    if pool_size > n {
        return Err(RaddError::InvalidArg(format!(
            "pool size {pool_size} exceeds |E| = {n}"
        )));
    }
    if pool_size < 2 {
        return Err(RaddError::InvalidArg("pool size must be >= 2".into()));
    }
    let n_hard = ((pool_size - 1) as f64 * hard_fraction).ceil() as usize;
    let n_hard = n_hard.min(pool_size - 1);
    let mut ids = Vec::with_capacity(pool_size);
    ids.push(answer);
    ids.extend(hard_negatives(scores, answer, n_hard)?);
    while ids.len() < pool_size {
        let e = rng.random_range(0..n as u32);
        if !ids.contains(&e) {
            ids.push(e);
        }
    }
    let teacher_scores = ids.iter().map(|&e| scores[e as usize]).collect();
    Ok(CandidatePool { ids, teacher_scores })
}

/// Tempered KL between the teacher's pool scores and the student's logits
/// sliced to the pool; the gradient is scattered back to full-logit width
/// (zero off-pool).
pub fn distill_loss(
    pool: &CandidatePool,
    student_logits_full: &[f64],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let student_slice: Vec<f64> = pool
        .ids
        .iter()
        .map(|&e| student_logits_full[e as usize])
        .collect();
    let (loss, grad_slice) = tempered_kl(&pool.teacher_scores, &student_slice, tau)?;
    let mut grad = vec![0.0f64; student_logits_full.len()];
    for (&e, &g) in pool.ids.iter().zip(&grad_slice) {
        grad[e as usize] = g;
    }
    Ok((loss, grad))
}

/// Per-term scalar losses of one step or epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub kge: f64,
    pub diff_tail: f64,
    pub diff_head: f64,
    pub diff: f64,
    pub distill: f64,
    pub rank: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn weighted_total(&self, cfg: &TrainConfig) -> f64 {
        self.kge + self.diff + cfg.lambda_distill * self.distill + cfg.lambda_rank * self.rank
    }
}

/// Live training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub meta: DataMeta,
    pub retriever: RetrieverParams,
    pub denoiser: DenoiserParams,
    pub ema: DenoiserParams,
    pub opt_retriever: AdamState,
    pub opt_denoiser: AdamState,
    pub schedule: NoiseSchedule,
    /// Epoch currently in progress (1-based); 0 before training starts.
    pub epoch: u64,
    pub val_history: Vec<ValPoint>,
    /// Snapshot at the best validation MRR seen so far.
    pub best_snapshot: Option<Box<Checkpoint>>,
}

impl TrainState {
    pub fn new(
        kg: &KnowledgeGraph,
        features: &ModalityFeatureStore,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validated(kg)?;
        let meta = DataMeta {
            n_entities: kg.n_entities(),
            n_relations: kg.n_relations(),
            d_visual: features.visual.dim(),
            d_textual: features.textual.dim(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let retriever = RetrieverParams::init(
            meta.n_entities,
            config.n_relations_effective(meta.n_relations),
            config.d,
            meta.d_visual,
            meta.d_textual,
            config.structure_only,
            &mut rng,
        );
        let denoiser = DenoiserParams::init(
            meta.n_entities,
            2 * config.d,
            2 * config.d,
            config.d_time,
            config.d_dir,
            config.denoiser_hidden_width(),
            &mut rng,
        )?;
        let ema = denoiser.clone();
        let opt_retriever = AdamState::new(
            AdamHyper::with_lr(config.lr_kge),
            &retriever.tensors().map(|t| t.shape()),
        );
        let den_shapes: Vec<(usize, usize)> = denoiser.tensors().iter().map(|t| t.shape()).collect();
        let opt_denoiser = AdamState::new(AdamHyper::with_lr(config.lr_denoiser), &den_shapes);
        let schedule = NoiseSchedule::new(config.t_steps, config.rho0)?;
        Ok(TrainState {
            config,
            meta,
            retriever,
            denoiser,
            ema,
            opt_retriever,
            opt_denoiser,
            schedule,
            epoch: 0,
            val_history: Vec::new(),
            best_snapshot: None,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: self.meta,
            config: self.config.clone(),
            retriever: self.retriever.clone(),
            denoiser: self.denoiser.clone(),
            ema: self.ema.clone(),
            opt_retriever: self.opt_retriever.clone(),
            opt_denoiser: self.opt_denoiser.clone(),
            epoch: self.epoch,
            val_history: self.val_history.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, kg: &KnowledgeGraph) -> Result<Self> {
        if ckpt.meta.n_entities != kg.n_entities() || ckpt.meta.n_relations != kg.n_relations() {
            return Err(RaddError::DimMismatch(format!(
                "checkpoint was trained on |E|={}, |R|={} but the graph has |E|={}, |R|={}",
                ckpt.meta.n_entities,
                ckpt.meta.n_relations,
                kg.n_entities(),
                kg.n_relations()
            )));
        }
        let schedule = NoiseSchedule::new(ckpt.config.t_steps, ckpt.config.rho0)?;
        Ok(TrainState {
            schedule,
            config: ckpt.config,
            meta: ckpt.meta,
            retriever: ckpt.retriever,
            denoiser: ckpt.denoiser,
            ema: ckpt.ema,
            opt_retriever: ckpt.opt_retriever,
            opt_denoiser: ckpt.opt_denoiser,
            epoch: ckpt.epoch,
            val_history: ckpt.val_history,
            best_snapshot: None,
        })
    }

    /// Hash of every retriever parameter bit; constant after the freeze.
    pub fn retriever_hash(&self) -> u64 {
        content_hash(self.retriever.tensors())
    }

    fn eval_settings(&self, split: Split) -> EvalSettings {
        EvalSettings {
            split,
            mode: AblationMode::Full,
            inference: InferenceMode::SinglePass,
            shortlist_k: self.config.shortlist_k,
            t_steps: self.config.t_steps,
            rho0: self.config.rho0,
            seed: self.config.seed,
            threads: self.config.threads,
        }
    }

    /// Validation metrics with the EMA denoiser weights (Diff-Rerank, Full).
    pub fn validate(
        &self,
        kg: &KnowledgeGraph,
        features: &ModalityFeatureStore,
    ) -> Result<MetricsReport> {
        evaluate(
            kg,
            features,
            &self.retriever,
            &self.ema,
            &self.eval_settings(Split::Valid),
        )
    }
}

fn derive_rng(seed: u64, epoch: u64, index: u64, salt: u64) -> ChaCha8Rng {
    let mut z = seed
        ^ epoch.wrapping_mul(0x9e3779b97f4a7c15)
        ^ index.wrapping_mul(0xbf58476d1ce4e5b9)
        ^ salt.wrapping_mul(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// KGE-side samples for one batch triple: both query directions, plus the
/// inverse-relation copies when augmentation is on.
fn kge_samples(triple: Triple, n_relations: usize, augment: bool) -> Vec<(Triple, Direction)> {
    let mut out = vec![(triple, Direction::Tail), (triple, Direction::Head)];
    if augment {
        let inv = Triple::new(triple.tail, triple.rel + n_relations as u32, triple.head);
        out.push((inv, Direction::Tail));
        out.push((inv, Direction::Head));
    }
    out
}

struct RetrieverPhaseOut {
    grads: RetrieverGrads,
    kge_sum: f64,
    rank_sum: f64,
    samples: usize,
}

struct DenoiserPhaseOut {
    grads: DenoiserGrads,
    tail_ce_sum: f64,
    head_ce_sum: f64,
    distill_sum: f64,
    distill_count: usize,
}

/// One optimization step over a batch per the joint objective.
pub fn joint_step(
    state: &mut TrainState,
    features: &ModalityFeatureStore,
    batch: &[Triple],
    element_offset: u64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(RaddError::InvalidArg("empty batch".into()));
    }
    let cfg = state.config.clone();
    let epoch = state.epoch;
    let retriever_live = epoch <= cfg.freeze_epoch;
    let n_entities = state.meta.n_entities;
    let n_relations = state.meta.n_relations;
    let augment = cfg.augment_inverse_relations;
    let samples_per_triple = if augment { 4 } else { 2 };
    let total_samples = (batch.len() * samples_per_triple) as f64;

    // Phase 1: retriever losses and update.
    let retriever = &state.retriever;
    let kge_worker = |chunk: &[(u64, Triple)]| -> RetrieverPhaseOut {
        let mut out = RetrieverPhaseOut {
            grads: RetrieverGrads::zeros_like(retriever),
            kge_sum: 0.0,
            rank_sum: 0.0,
            samples: 0,
        };
        for &(index, triple) in chunk {
            let mut rng = derive_rng(cfg.seed, epoch, element_offset + index, 1);
            for (t, dir) in kge_samples(triple, n_relations, augment) {
                let answer = match dir {
                    Direction::Tail => t.tail,
                    Direction::Head => t.head,
                };
                let negatives = sample_negatives(n_entities, answer, cfg.n_negatives, &mut rng);
                let pass = TriplePass::compute(retriever, features, t, dir, &negatives);
                let weights = adversarial_weights(pass.s_neg(), cfg.alpha_adv);
                let (kge, d_pos_kge, d_neg_kge) =
                    kge_loss_terms(pass.s_pos(), pass.s_neg(), &weights, cfg.gamma_kge);
                // Ranking hinge against the hardest sampled negative.
                let (best_i, &best_s) = pass
                    .s_neg()
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                let (rank, (d_pos_rank, d_neg_rank)) =
                    rank_margin_loss(pass.s_pos(), best_s, cfg.margin_rank);
                out.kge_sum += kge;
                out.rank_sum += rank;
                out.samples += 1;
                if retriever_live {
                    let scale = 1.0 / total_samples;
                    let d_pos = scale * (d_pos_kge + cfg.lambda_rank * d_pos_rank);
                    let mut d_neg: Vec<f64> =
                        d_neg_kge.iter().map(|&d| scale * d).collect();
                    d_neg[best_i] += scale * cfg.lambda_rank * d_neg_rank;
                    pass.backward(retriever, d_pos, &d_neg, &mut out.grads);
                }
            }
        }
        out
    };
    let indexed: Vec<(u64, Triple)> = batch
        .iter()
        .enumerate()
        .map(|(i, &t)| (i as u64, t))
        .collect();
    let phase1 = fan_out(&indexed, cfg.threads, kge_worker);
    let mut kge_sum = 0.0;
    let mut rank_sum = 0.0;
    let mut ret_grads = RetrieverGrads::zeros_like(&state.retriever);
    for part in phase1 {
        kge_sum += part.kge_sum;
        rank_sum += part.rank_sum;
        ret_grads.merge(&part.grads)?;
    }
    if retriever_live {
        let bufs = ret_grads.bufs();
        state.opt_retriever.step(&mut state.retriever.tensors_mut(), &bufs)?;
    }

    // Phase 2: teacher pools from the updated retriever, then the denoiser.
    let retriever = &state.retriever;
    let denoiser = &state.denoiser;
    let mut fused_cache: HashMap<u32, FusedMatrix> = HashMap::new();
    for t in batch {
        fused_cache
            .entry(t.rel)
            .or_insert_with(|| fuse_all(retriever, t.rel, features));
    }
    let fused_cache = &fused_cache;
    let distill_active = cfg.lambda_distill > 0.0
        && (!cfg.distill_after_freeze || epoch > cfg.freeze_epoch);
    let schedule = state.schedule;
    let directions: &[Direction] = if cfg.tail_only {
        &[Direction::Tail]
    } else {
        &[Direction::Tail, Direction::Head]
    };
    let den_worker = |chunk: &[(u64, Triple)]| -> Result<DenoiserPhaseOut> {
        let mut out = DenoiserPhaseOut {
            grads: DenoiserGrads::zeros_like(denoiser),
            tail_ce_sum: 0.0,
            head_ce_sum: 0.0,
            distill_sum: 0.0,
            distill_count: 0,
        };
        let n_batch = batch.len() as f64;
        let distill_pairs = (batch.len() * directions.len()) as f64;
        for &(index, triple) in chunk {
            let mut rng = derive_rng(cfg.seed, epoch, element_offset + index, 2);
            let t_step = rng.random_range(1..=schedule.t_max);
            let fused = &fused_cache[&triple.rel];
            let relvec = retriever.relation_vector(triple.rel);
            for &dir in directions {
                let query = Query::from_triple(triple, dir);
                let sample = corrupt(&schedule, query.answer, t_step, n_entities, &mut rng)?;
                let teacher_scores = score_all_cached(retriever, fused, &query);
                let pool = build_candidate_pool(
                    &teacher_scores,
                    query.answer,
                    cfg.pool_size,
                    cfg.hard_fraction,
                    &mut rng,
                )?;
                let ctx = fused.entity(query.known);
                let input = assemble_input(denoiser, ctx, &relvec, sample.xt, t_step, dir)?;
                let (logits, tape) = denoise_logits_with_tape(denoiser, &input)?;
                let (ce, ce_grad) = softmax_ce(&logits, query.answer as usize)?;
                let student_slice: Vec<f64> =
                    pool.ids.iter().map(|&e| logits[e as usize]).collect();
                let (kl, kl_grad_slice) =
                    tempered_kl(&pool.teacher_scores, &student_slice, cfg.tau)?;
                out.distill_sum += kl;
                out.distill_count += 1;
                let ce_weight = match dir {
                    Direction::Tail => {
                        out.tail_ce_sum += ce;
                        1.0 / n_batch
                    }
                    Direction::Head => {
                        out.head_ce_sum += ce;
                        cfg.lambda_head / n_batch
                    }
                };
                let mut dlogits: Vec<f64> = ce_grad.iter().map(|&g| g * ce_weight).collect();
                if distill_active {
                    let w = cfg.lambda_distill / distill_pairs;
                    for (&e, &g) in pool.ids.iter().zip(&kl_grad_slice) {
                        dlogits[e as usize] += w * g;
                    }
                }
                let input_grad =
                    mlp_backward(&denoiser.mlp, &tape, &dlogits, &mut out.grads.mlp)?;
                crate::diffusion::scatter_input_grad(
                    denoiser,
                    &input_grad,
                    sample.xt,
                    dir,
                    &mut out.grads,
                );
            }
        }
        Ok(out)
    };
    let phase2 = fan_out(&indexed, cfg.threads, den_worker);
    let mut den_grads = DenoiserGrads::zeros_like(&state.denoiser);
    let mut tail_ce_sum = 0.0;
    let mut head_ce_sum = 0.0;
    let mut distill_sum = 0.0;
    let mut distill_count = 0usize;
    for part in phase2 {
        let part = part?;
        tail_ce_sum += part.tail_ce_sum;
        head_ce_sum += part.head_ce_sum;
        distill_sum += part.distill_sum;
        distill_count += part.distill_count;
        den_grads.merge(&part.grads)?;
    }
    {
        let bufs = den_grads.bufs();
        let mut tensors = state.denoiser.tensors_mut();
        state.opt_denoiser.step(&mut tensors, &bufs)?;
    }
    for (shadow, live) in state.ema.tensors_mut().into_iter().zip(state.denoiser.tensors()) {
        ema_update(shadow, live, cfg.ema_decay)?;
    }

    let n_batch = batch.len() as f64;
    let diff_tail = tail_ce_sum / n_batch;
    let diff_head = head_ce_sum / n_batch;
    let diff = if cfg.tail_only {
        diff_tail
    } else {
        diff_tail + cfg.lambda_head * diff_head
    };
    let mut breakdown = LossBreakdown {
        kge: kge_sum / total_samples,
        diff_tail,
        diff_head,
        diff,
        distill: distill_sum / distill_count.max(1) as f64,
        rank: rank_sum / total_samples,
        total: 0.0,
    };
    breakdown.total = breakdown.weighted_total(&cfg);
    let finite = [
        breakdown.kge,
        breakdown.diff,
        breakdown.distill,
        breakdown.rank,
        breakdown.total,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return Err(RaddError::NonFinite(format!(
            "loss at epoch {}: kge={} diff={} distill={} rank={}",
            epoch, breakdown.kge, breakdown.diff, breakdown.distill, breakdown.rank
        )));
    }
    Ok(breakdown)
}

/// Chunked scoped-thread fan-out preserving chunk order in the result.
fn fan_out<T: Sync, O: Send>(
    items: &[T],
    threads: usize,
    worker: impl Fn(&[T]) -> O + Sync,
) -> Vec<O> {
    let threads = threads.max(1);
    if threads == 1 || items.len() < 2 * threads {
        return vec![worker(items)];
    }
    let chunk_size = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(|| worker(chunk)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub epoch: u64,
    pub kge: f64,
    pub diff: f64,
    pub distill: f64,
    pub rank: f64,
    pub total: f64,
    pub val_mrr: f64,
    pub val_h1: f64,
    pub val_h3: f64,
    pub val_h10: f64,
}

impl TrainLogRow {
    pub const TSV_HEADER: &'static str =
        "epoch\tloss_total\tloss_kge\tloss_diff\tloss_distill\tloss_rank\tval_mrr\tval_h1\tval_h3\tval_h10";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            self.epoch,
            self.total,
            self.kge,
            self.diff,
            self.distill,
            self.rank,
            self.val_mrr * 100.0,
            self.val_h1 * 100.0,
            self.val_h3 * 100.0,
            self.val_h10 * 100.0
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation MRR.
    pub best: Checkpoint,
    /// State at the final epoch.
    pub last: Checkpoint,
    pub log: Vec<TrainLogRow>,
}

/// Full training run: epoch loop over shuffled batches with periodic
/// validation; the best-validation checkpoint is kept alongside the final
/// one. Deterministic for a fixed seed at threads = 1.
pub fn train(
    kg: &KnowledgeGraph,
    features: &ModalityFeatureStore,
    config: TrainConfig,
    mut on_log: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(kg, features, config)?;
    train_from(&mut state, kg, features, &mut on_log)?;
    let last = state.to_checkpoint();
    let best = best_checkpoint(&state, &last);
    Ok(TrainOutcome {
        best,
        last,
        log: state.log_rows(),
    })
}

impl TrainState {
    fn log_rows(&self) -> Vec<TrainLogRow> {
        self.val_history
            .iter()
            .map(|v| TrainLogRow {
                epoch: v.epoch,
                kge: v.kge,
                diff: v.diff,
                distill: v.distill,
                rank: v.rank,
                total: v.total,
                val_mrr: v.mrr,
                val_h1: v.h1,
                val_h3: v.h3,
                val_h10: v.h10,
            })
            .collect()
    }
}

fn best_checkpoint(state: &TrainState, last: &Checkpoint) -> Checkpoint {
    state
        .best_snapshot
        .as_deref()
        .cloned()
        .unwrap_or_else(|| last.clone())
}

/// Continues training `state` up to `state.config.epochs`.
pub fn train_from(
    state: &mut TrainState,
    kg: &KnowledgeGraph,
    features: &ModalityFeatureStore,
    mut on_log: impl FnMut(&TrainLogRow),
) -> Result<()> {
    let epochs = state.config.epochs;
    if epochs == 0 {
        return Ok(());
    }
    if state.epoch == 0 {
        // Baseline validation of the initialization.
        record_validation(state, kg, features, LossBreakdown::default(), &mut on_log)?;
    }
    let start = state.epoch + 1;
    for epoch in start..=epochs {
        state.epoch = epoch;
        let mut order: Vec<Triple> = kg.train.to_vec();
        let mut shuffle_rng = derive_rng(state.config.seed, epoch, 0, 0);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_losses = LossBreakdown::default();
        let mut batches = 0usize;
        let mut offset = 0u64;
        for batch in order.chunks(state.config.batch_size) {
            let b = joint_step(state, features, batch, offset)?;
            offset += batch.len() as u64;
            epoch_losses.kge += b.kge;
            epoch_losses.diff_tail += b.diff_tail;
            epoch_losses.diff_head += b.diff_head;
            epoch_losses.diff += b.diff;
            epoch_losses.distill += b.distill;
            epoch_losses.rank += b.rank;
            epoch_losses.total += b.total;
            batches += 1;
        }
        let n = batches as f64;
        epoch_losses.kge /= n;
        epoch_losses.diff_tail /= n;
        epoch_losses.diff_head /= n;
        epoch_losses.diff /= n;
        epoch_losses.distill /= n;
        epoch_losses.rank /= n;
        epoch_losses.total /= n;
        if epoch % state.config.eval_every == 0 || epoch == epochs {
            record_validation(state, kg, features, epoch_losses, &mut on_log)?;
        }
    }
    Ok(())
}

fn record_validation(
    state: &mut TrainState,
    kg: &KnowledgeGraph,
    features: &ModalityFeatureStore,
    losses: LossBreakdown,
    on_log: &mut impl FnMut(&TrainLogRow),
) -> Result<()> {
    let report = state.validate(kg, features)?;
    let point = ValPoint {
        epoch: state.epoch,
        mrr: report.overall.mrr,
        h1: report.overall.h1,
        h3: report.overall.h3,
        h10: report.overall.h10,
        kge: losses.kge,
        diff: losses.diff,
        distill: losses.distill,
        rank: losses.rank,
        total: losses.total,
    };
    let row = TrainLogRow {
        epoch: point.epoch,
        kge: point.kge,
        diff: point.diff,
        distill: point.distill,
        rank: point.rank,
        total: point.total,
        val_mrr: point.mrr,
        val_h1: point.h1,
        val_h3: point.h3,
        val_h10: point.h10,
    };
    // Strictly greater than every previous point; ties keep the earliest.
    let is_best = state.val_history.iter().all(|v| point.mrr > v.mrr);
    state.val_history.push(point);
    if is_best {
        state.best_snapshot = Some(Box::new(state.to_checkpoint()));
    }
    on_log(&row);
    Ok(())
}

#[cfg(test)]
mod tests;
