//! Finite-difference certification of every trainable loss term.
//!
//! Each check freezes the stochastic and detached quantities of its loss
//! (sampled negatives, corruption draws, adversarial weights, hinge
//! selection, candidate pools, teacher scores, denoiser conditioning), so
//! the finite differences probe exactly the function the analytic gradient
//! differentiates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    diffusion_loss, plan_corruptions, ContextProvider, DenoiserGrads, DenoiserParams,
    NoiseSchedule, TriplePlan,
};
use crate::error::Result;
use crate::kgdata::{Direction, ModalityFeatureStore, ModalityFeatures, Triple};
use crate::numkernel::grad_check_multi;
use crate::retriever::{
    adversarial_weights, kge_loss, kge_loss_terms, rank_margin_loss, sample_negatives,
    RetrieverGrads, RetrieverParams, TriplePass,
};
use crate::trainer::{build_candidate_pool, distill_loss, CandidatePool};

/// Step sizes handed to the multi-step central-difference harness.
const FD_STEPS: [f64; 3] = [1e-5, 1e-4, 1e-3];

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seeds: u64,
    pub n_entities: usize,
    pub d: usize,
    pub threshold: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: 20,
            n_entities: 6,
            d: 2,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossCheck {
    pub name: &'static str,
    pub worst_rel_err: f64,
    pub seeds: u64,
    pub pass: bool,
}

struct Instance {
    retriever: RetrieverParams,
    denoiser: DenoiserParams,
    features: ModalityFeatureStore,
    triple: Triple,
    direction: Direction,
    negatives: Vec<u32>,
    plans: Vec<TriplePlan>,
    ctx: Vec<f64>,
    relvec: Vec<f64>,
    pool: CandidatePool,
}

struct FrozenCtx {
    ctx: Vec<f64>,
    relvec: Vec<f64>,
}

impl ContextProvider for FrozenCtx {
    fn context(&self, _e: u32, _r: u32) -> (Vec<f64>, Vec<f64>) {
        (self.ctx.clone(), self.relvec.clone())
    }
}

fn build_instance(opts: &SuiteOptions, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164 ^ seed);
    let n = opts.n_entities;
    let (d_v, d_t) = (3usize, 3usize);
    let retriever = RetrieverParams::init(n, 3, opts.d, d_v, d_t, false, &mut rng);
    let denoiser = DenoiserParams::init(n, 2 * opts.d, 2 * opts.d, 8, 4, 16, &mut rng)?;
    let mut visual = ModalityFeatures::new_absent(n, d_v);
    let mut textual = ModalityFeatures::new_absent(n, d_t);
    for e in 0..n {
        if e % 4 != 3 {
            let row: Vec<f32> = (0..d_v).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            visual.set(e, &row)?;
        }
        if e % 5 != 4 {
            let row: Vec<f32> = (0..d_t).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            textual.set(e, &row)?;
        }
    }
    let features = ModalityFeatureStore { visual, textual };
    let triple = Triple::new(
        rng.random_range(0..n as u32),
        rng.random_range(0..3),
        rng.random_range(0..n as u32),
    );
    let direction = if rng.random::<bool>() { Direction::Tail } else { Direction::Head };
    let answer = match direction {
        Direction::Tail => triple.tail,
        Direction::Head => triple.head,
    };
    let negatives = sample_negatives(n, answer, 3, &mut rng);
    let schedule = NoiseSchedule::new(6, 0.3)?;
    let plans = plan_corruptions(&schedule, &[triple], n, false, &mut rng)?;
    let ctx = crate::retriever::fuse_joint(&retriever, triple.head, triple.rel, &features);
    let relvec = retriever.relation_vector(triple.rel);
    let teacher: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pool = build_candidate_pool(&teacher, answer, (n / 2).max(2), 0.5, &mut rng)?;
    Ok(Instance {
        retriever,
        denoiser,
        features,
        triple,
        direction,
        negatives,
        plans,
        ctx,
        relvec,
        pool,
    })
}

fn check_kge(inst: &Instance, worst: &mut f64) -> Result<()> {
    let pass = TriplePass::compute(
        &inst.retriever,
        &inst.features,
        inst.triple,
        inst.direction,
        &inst.negatives,
    );
    let weights = adversarial_weights(pass.s_neg(), 1.0);
    let mut grads = RetrieverGrads::zeros_like(&inst.retriever);
    kge_loss(&pass, &inst.retriever, 6.0, 1.0, Some(&weights), 1.0, Some(&mut grads))?;
    let point = inst.retriever.pack();
    let loss_at = |v: &[f64]| {
        let mut p = inst.retriever.clone();
        p.unpack_raw(v);
        let pass = TriplePass::compute(&p, &inst.features, inst.triple, inst.direction, &inst.negatives);
        kge_loss(&pass, &p, 6.0, 1.0, Some(&weights), 1.0, None).unwrap().loss
    };
    let err = grad_check_multi(loss_at, &grads.pack(), &point, &FD_STEPS)?;
    *worst = worst.max(err);
    Ok(())
}

fn check_rank(inst: &Instance, worst: &mut f64) -> Result<()> {
    let pass = TriplePass::compute(
        &inst.retriever,
        &inst.features,
        inst.triple,
        inst.direction,
        &inst.negatives,
    );
    // Freeze the hardest-negative selection and pick a margin that keeps
    // the hinge active with slack, away from its kink.
    let (best_i, &best_s) = pass
        .s_neg()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let margin = (pass.s_pos() - best_s) + 2.0;
    let (_, (d_pos, d_neg)) = rank_margin_loss(pass.s_pos(), best_s, margin);
    let mut grads = RetrieverGrads::zeros_like(&inst.retriever);
    let mut d_neg_vec = vec![0.0; pass.s_neg().len()];
    d_neg_vec[best_i] = d_neg;
    pass.backward(&inst.retriever, d_pos, &d_neg_vec, &mut grads);
    let point = inst.retriever.pack();
    let loss_at = |v: &[f64]| {
        let mut p = inst.retriever.clone();
        p.unpack_raw(v);
        let pass = TriplePass::compute(&p, &inst.features, inst.triple, inst.direction, &inst.negatives);
        rank_margin_loss(pass.s_pos(), pass.s_neg()[best_i], margin).0
    };
    let err = grad_check_multi(loss_at, &grads.pack(), &point, &FD_STEPS)?;
    *worst = worst.max(err);
    Ok(())
}

fn check_direction_ce(inst: &Instance, direction: Direction, worst: &mut f64) -> Result<()> {
    // One direction's cross-entropy in isolation.
    let sample = match direction {
        Direction::Tail => inst.plans[0].tail_sample,
        Direction::Head => inst.plans[0].head_sample.expect("bidirectional plan"),
    };
    let ce_of = |den: &DenoiserParams, grads: Option<&mut DenoiserGrads>| -> f64 {
        crate::diffusion::direction_ce(den, &inst.ctx, &inst.relvec, &sample, direction, 1.0, grads)
            .unwrap()
    };
    let mut grads = DenoiserGrads::zeros_like(&inst.denoiser);
    ce_of(&inst.denoiser, Some(&mut grads));
    let point = inst.denoiser.pack();
    let loss_at = |v: &[f64]| {
        let mut d = inst.denoiser.clone();
        d.unpack_raw(v);
        ce_of(&d, None)
    };
    let err = grad_check_multi(loss_at, &grads.pack(), &point, &FD_STEPS)?;
    *worst = worst.max(err);
    Ok(())
}

fn check_distill(inst: &Instance, worst: &mut f64) -> Result<()> {
    // Distillation through the denoiser parameters at a frozen pool,
    // teacher, and conditioning input.
    let sample = &inst.plans[0].tail_sample;
    let t = inst.plans[0].t;
    let assemble = |den: &DenoiserParams| {
        crate::diffusion::assemble_input(den, &inst.ctx, &inst.relvec, sample.xt, t, Direction::Tail)
            .unwrap()
    };
    let loss_of = |den: &DenoiserParams| {
        let logits = crate::diffusion::denoise_logits(den, &assemble(den)).unwrap();
        distill_loss(&inst.pool, &logits, 0.7).unwrap().0
    };

    let input = assemble(&inst.denoiser);
    let (logits, tape) = crate::diffusion::denoise_logits_with_tape(&inst.denoiser, &input)?;
    let (_, dlogits) = distill_loss(&inst.pool, &logits, 0.7)?;
    let mut grads = DenoiserGrads::zeros_like(&inst.denoiser);
    let input_grad =
        crate::numkernel::mlp_backward(&inst.denoiser.mlp, &tape, &dlogits, &mut grads.mlp)?;
    crate::diffusion::scatter_input_grad(&inst.denoiser, &input_grad, sample.xt, Direction::Tail, &mut grads);

    let point = inst.denoiser.pack();
    let loss_at = |v: &[f64]| {
        let mut d = inst.denoiser.clone();
        d.unpack_raw(v);
        loss_of(&d)
    };
    let err = grad_check_multi(loss_at, &grads.pack(), &point, &FD_STEPS)?;
    *worst = worst.max(err);
    Ok(())
}

fn check_joint(inst: &Instance, worst: &mut f64) -> Result<()> {
    let (lambda_rank, lambda_head, lambda_distill, tau) = (0.1, 2.0, 1.0, 0.7);
    let pass = TriplePass::compute(
        &inst.retriever,
        &inst.features,
        inst.triple,
        inst.direction,
        &inst.negatives,
    );
    let weights = adversarial_weights(pass.s_neg(), 1.0);
    let (best_i, &best_s) = pass
        .s_neg()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let margin = (pass.s_pos() - best_s) + 2.0;
    let provider = FrozenCtx {
        ctx: inst.ctx.clone(),
        relvec: inst.relvec.clone(),
    };

    // Analytic gradient over [retriever params ; denoiser params].
    let mut ret_grads = RetrieverGrads::zeros_like(&inst.retriever);
    let (_, d_pos_kge, d_neg_kge) = kge_loss_terms(pass.s_pos(), pass.s_neg(), &weights, 6.0);
    let (_, (d_pos_rank, d_neg_rank)) = rank_margin_loss(pass.s_pos(), best_s, margin);
    let mut d_neg: Vec<f64> = d_neg_kge;
    d_neg[best_i] += lambda_rank * d_neg_rank;
    pass.backward(
        &inst.retriever,
        d_pos_kge + lambda_rank * d_pos_rank,
        &d_neg,
        &mut ret_grads,
    );
    let mut den_grads = DenoiserGrads::zeros_like(&inst.denoiser);
    diffusion_loss(&inst.denoiser, &inst.plans, &provider, lambda_head, Some(&mut den_grads))?;
    {
        // Distillation term on the tail pass.
        let sample = &inst.plans[0].tail_sample;
        let input = crate::diffusion::assemble_input(
            &inst.denoiser,
            &inst.ctx,
            &inst.relvec,
            sample.xt,
            inst.plans[0].t,
            Direction::Tail,
        )?;
        let (logits, tape) = crate::diffusion::denoise_logits_with_tape(&inst.denoiser, &input)?;
        let (_, mut dlogits) = distill_loss(&inst.pool, &logits, tau)?;
        for d in &mut dlogits {
            *d *= lambda_distill;
        }
        let input_grad =
            crate::numkernel::mlp_backward(&inst.denoiser.mlp, &tape, &dlogits, &mut den_grads.mlp)?;
        crate::diffusion::scatter_input_grad(
            &inst.denoiser,
            &input_grad,
            sample.xt,
            Direction::Tail,
            &mut den_grads,
        );
    }
    let mut analytic = ret_grads.pack();
    analytic.extend(den_grads.pack());

    let ret_len = inst.retriever.pack().len();
    let mut point = inst.retriever.pack();
    point.extend(inst.denoiser.pack());
    let loss_at = |v: &[f64]| {
        let mut rp = inst.retriever.clone();
        rp.unpack_raw(&v[..ret_len]);
        let mut dp = inst.denoiser.clone();
        dp.unpack_raw(&v[ret_len..]);
        let pass =
            TriplePass::compute(&rp, &inst.features, inst.triple, inst.direction, &inst.negatives);
        let (kge, _, _) = kge_loss_terms(pass.s_pos(), pass.s_neg(), &weights, 6.0);
        let (rank, _) = rank_margin_loss(pass.s_pos(), pass.s_neg()[best_i], margin);
        let diff = diffusion_loss(&dp, &inst.plans, &provider, lambda_head, None)
            .unwrap()
            .combined;
        let sample = &inst.plans[0].tail_sample;
        let input = crate::diffusion::assemble_input(
            &dp,
            &inst.ctx,
            &inst.relvec,
            sample.xt,
            inst.plans[0].t,
            Direction::Tail,
        )
        .unwrap();
        let logits = crate::diffusion::denoise_logits(&dp, &input).unwrap();
        let (distill, _) = distill_loss(&inst.pool, &logits, tau).unwrap();
        kge + lambda_rank * rank + diff + lambda_distill * distill
    };
    let err = grad_check_multi(loss_at, &analytic, &point, &FD_STEPS)?;
    *worst = worst.max(err);
    Ok(())
}

/// Runs every loss-gradient check across `opts.seeds` random instances.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<LossCheck>> {
    let mut worst = [0.0f64; 6];
    for seed in 0..opts.seeds {
        let inst = build_instance(opts, seed)?;
        check_kge(&inst, &mut worst[0])?;
        check_rank(&inst, &mut worst[1])?;
        check_direction_ce(&inst, Direction::Tail, &mut worst[2])?;
        check_direction_ce(&inst, Direction::Head, &mut worst[3])?;
        check_distill(&inst, &mut worst[4])?;
        check_joint(&inst, &mut worst[5])?;
    }
    let names = ["kge", "rank", "tail-CE", "head-CE", "distill", "joint"];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(&name, worst_rel_err)| LossCheck {
            name,
            worst_rel_err,
            seeds: opts.seeds,
            pass: worst_rel_err < opts.threshold,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_fresh_parameters() {
        let checks = run_suite(&SuiteOptions::default()).unwrap();
        assert_eq!(checks.len(), 6);
        for c in &checks {
            assert!(c.pass, "{}: worst {:e}", c.name, c.worst_rel_err);
        }
    }

    /// The harness must notice a corrupted gradient entry.
    #[test]
    fn injected_sign_error_is_reported() {
        let opts = SuiteOptions::default();
        let inst = build_instance(&opts, 0).unwrap();
        let pass = TriplePass::compute(
            &inst.retriever,
            &inst.features,
            inst.triple,
            inst.direction,
            &inst.negatives,
        );
        let weights = adversarial_weights(pass.s_neg(), 1.0);
        let mut grads = RetrieverGrads::zeros_like(&inst.retriever);
        kge_loss(&pass, &inst.retriever, 6.0, 1.0, Some(&weights), 1.0, Some(&mut grads)).unwrap();
        let mut analytic = grads.pack();
        // Flip the sign of the largest entry.
        let (imax, _) = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        analytic[imax] = -analytic[imax];
        let point = inst.retriever.pack();
        let loss_at = |v: &[f64]| {
            let mut p = inst.retriever.clone();
            p.unpack_raw(v);
            let pass = TriplePass::compute(
                &p,
                &inst.features,
                inst.triple,
                inst.direction,
                &inst.negatives,
            );
            kge_loss(&pass, &p, 6.0, 1.0, Some(&weights), 1.0, None).unwrap().loss
        };
        let err = grad_check_multi(loss_at, &analytic, &point, &FD_STEPS).unwrap();
        assert!(err > 0.1, "sign error not detected: {err}");
    }
}
