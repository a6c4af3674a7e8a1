//! Discrete forward corruption over E ∪ {MASK} and the conditional denoiser.
//!
//! The forward process keeps, masks, or replaces the clean entity id at a
//! sampled timestep; the reverse model is an MLP over the concatenated
//! (context, relation, token, timestep, direction) input predicting logits
//! for every entity. Training is plain cross-entropy against the clean id
//! in both query directions.

use rand::Rng;

use crate::error::{RaddError, Result};
use crate::kgdata::{Direction, Triple};
use crate::numkernel::{
    mlp_apply, mlp_backward, softmax_ce, Activation, GradBuf, MlpGrads, MlpLayer, MlpParams,
    MlpTape, Tensor,
};

/// Keep/mask/replace schedule over timesteps 1..=T.
///
/// keep(t) = cos²((t/T)·π/2); the replacement share of the corruption mass
/// anneals linearly from ρ₀ at t=0 to zero at t=T, so t=T is pure masking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: u32,
    pub rho0: f64,
}

impl NoiseSchedule {
    pub fn new(t_max: u32, rho0: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(RaddError::InvalidArg("schedule needs T >= 1".into()));
        }
        if !(0.0..=1.0).contains(&rho0) {
            return Err(RaddError::InvalidArg(format!(
                "replacement probability must be in [0, 1], got {rho0}"
            )));
        }
        Ok(NoiseSchedule { t_max, rho0 })
    }

    /// (keep, mask, rep) at timestep t ∈ 1..=T; always a simplex point.
    pub fn probs(&self, t: u32) -> Result<(f64, f64, f64)> {
        if t == 0 || t > self.t_max {
            return Err(RaddError::InvalidArg(format!(
                "timestep {t} outside 1..={}",
                self.t_max
            )));
        }
        if t == self.t_max {
            // cos(π/2) is not exactly zero in floating point; the boundary
            // is pure masking by definition.
            return Ok((0.0, 1.0, 0.0));
        }
        let frac = t as f64 / self.t_max as f64;
        let c = (frac * std::f64::consts::FRAC_PI_2).cos();
        let keep = c * c;
        let rep = self.rho0 * (1.0 - frac) * (1.0 - keep);
        let mask = 1.0 - keep - rep;
        Ok((keep, mask, rep))
    }
}

/// Which corruption branch a sample took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Kept,
    Masked,
    Replaced,
}

/// One forward-process draw: x0 corrupted to xt at timestep t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSample {
    pub x0: u32,
    pub t: u32,
    /// Entity id, or n_entities for MASK.
    pub xt: u32,
    pub channel: Channel,
}

/// Draws xt ~ q(xt | x0, t) over E ∪ {MASK}.
pub fn corrupt(
    schedule: &NoiseSchedule,
    x0: u32,
    t: u32,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<CorruptionSample> {
    let (keep, mask, rep) = schedule.probs(t)?;
    if n_entities < 2 && rep > 0.0 {
        return Err(RaddError::InvalidArg(
            "replacement corruption needs at least 2 entities".into(),
        ));
    }
    let u: f64 = rng.random();
    let (xt, channel) = if u < keep {
        (x0, Channel::Kept)
    } else if u < keep + mask {
        (n_entities as u32, Channel::Masked)
    } else {
        loop {
            let e = rng.random_range(0..n_entities as u32);
            if e != x0 {
                break (e, Channel::Replaced);
            }
        }
    };
    Ok(CorruptionSample { x0, t, xt, channel })
}

/// Sinusoidal embedding: interleaved (sin(t·ωₖ), cos(t·ωₖ)) with ωₖ
/// geometric from 1 down to 1/10⁴ across d_time/2 frequencies.
pub fn timestep_embedding(t: u32, d_time: usize) -> Result<Vec<f64>> {
    if d_time % 2 != 0 {
        return Err(RaddError::InvalidArg(format!(
            "timestep embedding width must be even, got {d_time}"
        )));
    }
    let half = d_time / 2;
    let mut out = Vec::with_capacity(d_time);
    for k in 0..half {
        let exponent = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let omega = 10f64.powf(-4.0 * exponent);
        let arg = t as f64 * omega;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Conditioning MLP plus the learned token, direction, and mask embeddings.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    /// (|E|+1) × d_tok; the last row is the learned MASK embedding.
    pub token_table: Tensor,
    /// 2 × d_dir, rows (tail, head).
    pub direction_emb: Tensor,
    pub mlp: MlpParams,
    pub d_time: usize,
    /// Width of the fused context vector (2d).
    pub ctx_width: usize,
}

impl DenoiserParams {
    pub fn init(
        n_entities: usize,
        ctx_width: usize,
        d_tok: usize,
        d_time: usize,
        d_dir: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_time % 2 != 0 {
            return Err(RaddError::InvalidArg("d_time must be even".into()));
        }
        let bound = 6.0 / (d_tok as f64).sqrt();
        let token_table =
            Tensor::from_fn(n_entities + 1, d_tok, |_, _| rng.random_range(-bound..bound));
        let dbound = 6.0 / (d_dir as f64).sqrt();
        let direction_emb = Tensor::from_fn(2, d_dir, |_, _| rng.random_range(-dbound..dbound));
        let in_dim = 2 * ctx_width + d_tok + d_time + d_dir;
        let dims = [in_dim, hidden, hidden, n_entities];
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layers.push(MlpLayer {
                weight: Tensor::from_fn(fan_out, fan_in, |_, _| rng.random_range(-b..b)),
                bias: Tensor::zeros(1, fan_out),
            });
        }
        let mlp = MlpParams::new(layers, Activation::GeluTanh)?;
        let p = DenoiserParams {
            token_table,
            direction_emb,
            mlp,
            d_time,
            ctx_width,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks the input/output width invariants.
    pub fn validate(&self) -> Result<()> {
        let expect = 2 * self.ctx_width + self.d_tok() + self.d_time + self.d_dir();
        if self.mlp.in_dim() != expect {
            return Err(RaddError::DimMismatch(format!(
                "denoiser MLP input width {} expected {expect}",
                self.mlp.in_dim()
            )));
        }
        if self.mlp.out_dim() != self.n_entities() {
            return Err(RaddError::DimMismatch(format!(
                "denoiser MLP output width {} expected |E| = {}",
                self.mlp.out_dim(),
                self.n_entities()
            )));
        }
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.token_table.rows() - 1
    }

    pub fn mask_id(&self) -> u32 {
        self.n_entities() as u32
    }

    pub fn d_tok(&self) -> usize {
        self.token_table.cols()
    }

    pub fn d_dir(&self) -> usize {
        self.direction_emb.cols()
    }

    /// Checkpoint-ordered tensor names.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["token_table".to_owned(), "direction".to_owned()];
        for i in 0..self.mlp.layers.len() {
            names.push(format!("mlp.{i}.weight"));
            names.push(format!("mlp.{i}.bias"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_table, &self.direction_emb];
        for l in &self.mlp.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.token_table, &mut self.direction_emb];
        for l in &mut self.mlp.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in self.tensors() {
            v.extend_from_slice(t.data());
        }
        v
    }

    pub fn unpack_raw(&mut self, v: &[f64]) {
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_raw(&v[at..at + n]);
            at += n;
        }
        assert_eq!(at, v.len());
    }
}

/// Gradient buffers mirroring `DenoiserParams`.
#[derive(Debug, Clone)]
pub struct DenoiserGrads {
    pub token_table: GradBuf,
    pub direction_emb: GradBuf,
    pub mlp: MlpGrads,
}

impl DenoiserGrads {
    pub fn zeros_like(p: &DenoiserParams) -> Self {
        DenoiserGrads {
            token_table: GradBuf::zeros_like(&p.token_table),
            direction_emb: GradBuf::zeros_like(&p.direction_emb),
            mlp: MlpGrads::zeros_like(&p.mlp),
        }
    }

    pub fn bufs(&self) -> Vec<&GradBuf> {
        let mut out = vec![&self.token_table, &self.direction_emb];
        for (w, b) in &self.mlp.layers {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for b in self.bufs() {
            v.extend_from_slice(b.data());
        }
        v
    }

    pub fn merge(&mut self, other: &DenoiserGrads) -> Result<()> {
        self.token_table.merge(&other.token_table)?;
        self.direction_emb.merge(&other.direction_emb)?;
        self.mlp.merge(&other.mlp)
    }
}

/// Concatenated denoiser input (context; relation; token; time; direction).
pub fn assemble_input(
    denoiser: &DenoiserParams,
    context: &[f64],
    relation_vec: &[f64],
    xt: u32,
    t: u32,
    direction: Direction,
) -> Result<Vec<f64>> {
    if context.len() != denoiser.ctx_width || relation_vec.len() != denoiser.ctx_width {
        return Err(RaddError::DimMismatch(format!(
            "context/relation widths {}/{} expected {}",
            context.len(),
            relation_vec.len(),
            denoiser.ctx_width
        )));
    }
    if xt as usize >= denoiser.token_table.rows() {
        return Err(RaddError::InvalidArg(format!(
            "token id {xt} outside entity range + MASK"
        )));
    }
    let mut input =
        Vec::with_capacity(2 * denoiser.ctx_width + denoiser.d_tok() + denoiser.d_time + denoiser.d_dir());
    input.extend_from_slice(context);
    input.extend_from_slice(relation_vec);
    input.extend_from_slice(denoiser.token_table.row(xt as usize));
    input.extend(timestep_embedding(t, denoiser.d_time)?);
    input.extend_from_slice(denoiser.direction_emb.row(direction.index()));
    Ok(input)
}

/// Raw logits over all entities; softmax is applied by consumers.
pub fn denoise_logits(denoiser: &DenoiserParams, input: &[f64]) -> Result<Vec<f64>> {
    Ok(mlp_apply(&denoiser.mlp, input)?.0)
}

pub fn denoise_logits_with_tape(
    denoiser: &DenoiserParams,
    input: &[f64],
) -> Result<(Vec<f64>, MlpTape)> {
    mlp_apply(&denoiser.mlp, input)
}

/// Scatters the MLP input gradient back onto the token and direction rows.
/// Context, relation, and timestep slices are constants by contract.
pub fn scatter_input_grad(
    denoiser: &DenoiserParams,
    input_grad: &[f64],
    xt: u32,
    direction: Direction,
    grads: &mut DenoiserGrads,
) {
    let tok_at = 2 * denoiser.ctx_width;
    let d_tok = denoiser.d_tok();
    for j in 0..d_tok {
        grads.token_table.add(xt as usize, j, input_grad[tok_at + j]);
    }
    let dir_at = tok_at + d_tok + denoiser.d_time;
    for j in 0..denoiser.d_dir() {
        grads
            .direction_emb
            .add(direction.index(), j, input_grad[dir_at + j]);
    }
}

/// Supplies the frozen conditioning pieces the denoiser consumes: the fused
/// representation of the observed entity and the relation rotation vector.
pub trait ContextProvider {
    fn context(&self, entity: u32, relation: u32) -> (Vec<f64>, Vec<f64>);
}

impl<F> ContextProvider for F
where
    F: Fn(u32, u32) -> (Vec<f64>, Vec<f64>),
{
    fn context(&self, entity: u32, relation: u32) -> (Vec<f64>, Vec<f64>) {
        self(entity, relation)
    }
}

/// Pre-sampled corruption for one triple: one shared timestep, with the
/// tail corrupted for the tail direction and the head for the head
/// direction.
#[derive(Debug, Clone)]
pub struct TriplePlan {
    pub triple: Triple,
    pub t: u32,
    pub tail_sample: CorruptionSample,
    pub head_sample: Option<CorruptionSample>,
}

/// Draws the stochastic choices of `diffusion_loss` up front so losses and
/// gradients are deterministic afterwards.
pub fn plan_corruptions(
    schedule: &NoiseSchedule,
    triples: &[Triple],
    n_entities: usize,
    tail_only: bool,
    rng: &mut impl Rng,
) -> Result<Vec<TriplePlan>> {
    triples
        .iter()
        .map(|&triple| {
            let t = rng.random_range(1..=schedule.t_max);
            let tail_sample = corrupt(schedule, triple.tail, t, n_entities, rng)?;
            let head_sample = if tail_only {
                None
            } else {
                Some(corrupt(schedule, triple.head, t, n_entities, rng)?)
            };
            Ok(TriplePlan {
                triple,
                t,
                tail_sample,
                head_sample,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiffusionLossOut {
    pub tail_ce: f64,
    pub head_ce: f64,
    /// tail_ce + λ_h · head_ce
    pub combined: f64,
}

/// One direction of one plan: cross-entropy of the denoiser prediction
/// against the clean id, with gradients flowing to denoiser parameters
/// only. `weight` scales the gradient (head upweighting and batch mean).
pub fn direction_ce(
    denoiser: &DenoiserParams,
    context: &[f64],
    relation_vec: &[f64],
    sample: &CorruptionSample,
    direction: Direction,
    weight: f64,
    grads: Option<&mut DenoiserGrads>,
) -> Result<f64> {
    let input = assemble_input(denoiser, context, relation_vec, sample.xt, sample.t, direction)?;
    let (logits, tape) = denoise_logits_with_tape(denoiser, &input)?;
    let (loss, mut dlogits) = softmax_ce(&logits, sample.x0 as usize)?;
    if let Some(grads) = grads {
        for d in &mut dlogits {
            *d *= weight;
        }
        let input_grad = mlp_backward(&denoiser.mlp, &tape, &dlogits, &mut grads.mlp)?;
        scatter_input_grad(denoiser, &input_grad, sample.xt, direction, grads);
    }
    Ok(loss)
}

/// Bidirectional denoising loss over a batch: mean tail CE plus λ_h times
/// mean head CE. Tail-only mode drops the head term entirely.
pub fn diffusion_loss(
    denoiser: &DenoiserParams,
    plans: &[TriplePlan],
    provider: &dyn ContextProvider,
    lambda_head: f64,
    mut grads: Option<&mut DenoiserGrads>,
) -> Result<DiffusionLossOut> {
    if plans.is_empty() {
        return Err(RaddError::InvalidArg("diffusion loss over empty batch".into()));
    }
    if lambda_head <= 0.0 {
        return Err(RaddError::InvalidArg(format!(
            "head-loss weight must be > 0, got {lambda_head}"
        )));
    }
    let n = plans.len() as f64;
    let mut tail_ce = 0.0;
    let mut head_ce = 0.0;
    for plan in plans {
        let (ctx, relvec) = provider.context(plan.triple.head, plan.triple.rel);
        tail_ce += direction_ce(
            denoiser,
            &ctx,
            &relvec,
            &plan.tail_sample,
            Direction::Tail,
            1.0 / n,
            grads.as_deref_mut(),
        )?;
        if let Some(head_sample) = &plan.head_sample {
            let (ctx, relvec) = provider.context(plan.triple.tail, plan.triple.rel);
            head_ce += direction_ce(
                denoiser,
                &ctx,
                &relvec,
                head_sample,
                Direction::Head,
                lambda_head / n,
                grads.as_deref_mut(),
            )?;
        }
    }
    tail_ce /= n;
    head_ce /= n;
    let combined = if plans[0].head_sample.is_some() {
        tail_ce + lambda_head * head_ce
    } else {
        tail_ce
    };
    Ok(DiffusionLossOut {
        tail_ce,
        head_ce,
        combined,
    })
}

#[cfg(test)]
mod tests;
