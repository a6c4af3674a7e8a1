//! Relation-aware multimodal KGE scorer.
//!
//! Entities are represented by d complex components stored as interleaved
//! (re, im) pairs of length 2d. A per-relation 3-way softmax gate mixes the
//! structural embedding with projected visual/textual features; triples are
//! scored by complex rotation, −Σ_j |h_j·e^{iθ_j} − t_j| with the complex
//! modulus per component, so the score is ≤ 0 with equality iff h∘r = t.

use rand::Rng;

use crate::error::{RaddError, Result};
use crate::kgdata::{Direction, ModalityFeatureStore, Query, Triple};
use crate::numkernel::{log_sigmoid, sigmoid, softmax, GradBuf, Tensor};

/// Guard below which a complex-modulus gradient is treated as zero.
const MODULUS_EPS: f64 = 1e-30;

#[derive(Debug, Clone)]
pub struct RetrieverParams {
    /// Number of complex components d; vectors have length 2d.
    pub dim: usize,
    /// |E| x 2d structural embeddings.
    pub structural: Tensor,
    /// |R| x d rotation angles (radians, unconstrained; used through cos/sin).
    pub relation_phase: Tensor,
    /// |R| x 3 gate logits, order (structural, visual, textual).
    pub gate_logits: Tensor,
    /// d_v x 2d visual projection and 1 x 2d bias.
    pub proj_visual: Tensor,
    pub proj_visual_bias: Tensor,
    /// d_t x 2d textual projection and 1 x 2d bias.
    pub proj_textual: Tensor,
    pub proj_textual_bias: Tensor,
    /// Learned stand-ins (in the fused 2d space) for absent modalities.
    pub default_visual: Tensor,
    pub default_textual: Tensor,
    /// RADD-S: pin the gate to (1, 0, 0) and skip the projections.
    pub structure_only: bool,
}

pub const RETRIEVER_TENSOR_NAMES: [&str; 9] = [
    "structural",
    "relation_phase",
    "gate_logits",
    "proj_visual",
    "proj_visual_bias",
    "proj_textual",
    "proj_textual_bias",
    "default_visual",
    "default_textual",
];

impl RetrieverParams {
    pub fn init(
        n_entities: usize,
        n_relations: usize,
        dim: usize,
        d_visual: usize,
        d_textual: usize,
        structure_only: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let width = 2 * dim;
        let bound = 6.0 / (width as f64).sqrt();
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let structural = Tensor::from_fn(n_entities, width, |_, _| rng.random_range(-bound..bound));
        let relation_phase = Tensor::from_fn(n_relations, dim, |_, _| {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        });
        let gate_logits = Tensor::zeros(n_relations, 3);
        let bv = xavier(d_visual, width);
        let proj_visual = Tensor::from_fn(d_visual, width, |_, _| rng.random_range(-bv..bv));
        let proj_visual_bias = Tensor::zeros(1, width);
        let bt = xavier(d_textual, width);
        let proj_textual = Tensor::from_fn(d_textual, width, |_, _| rng.random_range(-bt..bt));
        let proj_textual_bias = Tensor::zeros(1, width);
        let default_visual = Tensor::from_fn(1, width, |_, _| rng.random_range(-bound..bound));
        let default_textual = Tensor::from_fn(1, width, |_, _| rng.random_range(-bound..bound));
        RetrieverParams {
            dim,
            structural,
            relation_phase,
            gate_logits,
            proj_visual,
            proj_visual_bias,
            proj_textual,
            proj_textual_bias,
            default_visual,
            default_textual,
            structure_only,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.structural.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_phase.rows()
    }

    pub fn width(&self) -> usize {
        2 * self.dim
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.structural,
            &self.relation_phase,
            &self.gate_logits,
            &self.proj_visual,
            &self.proj_visual_bias,
            &self.proj_textual,
            &self.proj_textual_bias,
            &self.default_visual,
            &self.default_textual,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.structural,
            &mut self.relation_phase,
            &mut self.gate_logits,
            &mut self.proj_visual,
            &mut self.proj_visual_bias,
            &mut self.proj_textual,
            &mut self.proj_textual_bias,
            &mut self.default_visual,
            &mut self.default_textual,
        ]
    }

    /// Flat parameter-vector view in `tensors()` order, for the
    /// finite-difference harness.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in self.tensors() {
            v.extend_from_slice(t.data());
        }
        v
    }

    /// Raw (non-quantizing) overwrite from a flat vector; harness only.
    pub fn unpack_raw(&mut self, v: &[f64]) {
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_raw(&v[at..at + n]);
            at += n;
        }
        assert_eq!(at, v.len());
    }

    /// Gate coefficients α^(r): a softmax over the relation's gate logits,
    /// or exactly (1, 0, 0) in structure-only mode.
    pub fn gate(&self, relation: u32) -> [f64; 3] {
        if self.structure_only {
            return [1.0, 0.0, 0.0];
        }
        let a = softmax(self.gate_logits.row(relation as usize));
        [a[0], a[1], a[2]]
    }

    /// Unit-modulus relation rotation as interleaved (cos θ_j, sin θ_j).
    pub fn relation_vector(&self, relation: u32) -> Vec<f64> {
        let row = self.relation_phase.row(relation as usize);
        let mut out = Vec::with_capacity(2 * self.dim);
        for &theta in row {
            out.push(theta.cos());
            out.push(theta.sin());
        }
        out
    }
}

/// Gradient buffers mirroring `RetrieverParams`.
#[derive(Debug, Clone)]
pub struct RetrieverGrads {
    pub structural: GradBuf,
    pub relation_phase: GradBuf,
    pub gate_logits: GradBuf,
    pub proj_visual: GradBuf,
    pub proj_visual_bias: GradBuf,
    pub proj_textual: GradBuf,
    pub proj_textual_bias: GradBuf,
    pub default_visual: GradBuf,
    pub default_textual: GradBuf,
}

impl RetrieverGrads {
    pub fn zeros_like(p: &RetrieverParams) -> Self {
        RetrieverGrads {
            structural: GradBuf::zeros_like(&p.structural),
            relation_phase: GradBuf::zeros_like(&p.relation_phase),
            gate_logits: GradBuf::zeros_like(&p.gate_logits),
            proj_visual: GradBuf::zeros_like(&p.proj_visual),
            proj_visual_bias: GradBuf::zeros_like(&p.proj_visual_bias),
            proj_textual: GradBuf::zeros_like(&p.proj_textual),
            proj_textual_bias: GradBuf::zeros_like(&p.proj_textual_bias),
            default_visual: GradBuf::zeros_like(&p.default_visual),
            default_textual: GradBuf::zeros_like(&p.default_textual),
        }
    }

    pub fn bufs(&self) -> [&GradBuf; 9] {
        [
            &self.structural,
            &self.relation_phase,
            &self.gate_logits,
            &self.proj_visual,
            &self.proj_visual_bias,
            &self.proj_textual,
            &self.proj_textual_bias,
            &self.default_visual,
            &self.default_textual,
        ]
    }

    /// Flat gradient vector matching `RetrieverParams::pack` order.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for b in self.bufs() {
            v.extend_from_slice(b.data());
        }
        v
    }

    pub fn merge(&mut self, other: &RetrieverGrads) -> Result<()> {
        self.structural.merge(&other.structural)?;
        self.relation_phase.merge(&other.relation_phase)?;
        self.gate_logits.merge(&other.gate_logits)?;
        self.proj_visual.merge(&other.proj_visual)?;
        self.proj_visual_bias.merge(&other.proj_visual_bias)?;
        self.proj_textual.merge(&other.proj_textual)?;
        self.proj_textual_bias.merge(&other.proj_textual_bias)?;
        self.default_visual.merge(&other.default_visual)?;
        self.default_textual.merge(&other.default_textual)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum ModalInput {
    /// Projected feature vector; keeps the raw input for projection grads.
    Present(Vec<f64>),
    Default,
}

/// Everything needed to push a gradient back through one fused embedding.
#[derive(Debug, Clone)]
pub struct FuseTape {
    entity: u32,
    relation: u32,
    alpha: [f64; 3],
    /// The three pre-gate vectors (structural, visual, textual).
    modal: [Vec<f64>; 3],
    visual_src: ModalInput,
    textual_src: ModalInput,
    structure_only: bool,
}

/// Relation-conditioned joint representation (Σ_m α_m · e^(m)).
pub fn fuse_joint(
    params: &RetrieverParams,
    entity: u32,
    relation: u32,
    features: &ModalityFeatureStore,
) -> Vec<f64> {
    fuse_with_tape(params, entity, relation, features).0
}

pub fn fuse_with_tape(
    params: &RetrieverParams,
    entity: u32,
    relation: u32,
    features: &ModalityFeatureStore,
) -> (Vec<f64>, FuseTape) {
    let width = params.width();
    let e_s = params.structural.row(entity as usize).to_vec();
    if params.structure_only {
        let tape = FuseTape {
            entity,
            relation,
            alpha: [1.0, 0.0, 0.0],
            modal: [e_s.clone(), Vec::new(), Vec::new()],
            visual_src: ModalInput::Default,
            textual_src: ModalInput::Default,
            structure_only: true,
        };
        return (e_s, tape);
    }
    let alpha = params.gate(relation);
    let project = |input: Option<&[f32]>, w: &Tensor, b: &Tensor, default: &Tensor| match input {
        Some(x) => {
            let mut out = b.row(0).to_vec();
            for (i, &xi) in x.iter().enumerate() {
                let wrow = w.row(i);
                let xi = xi as f64;
                for (o, wv) in wrow.iter().enumerate() {
                    out[o] += xi * wv;
                }
            }
            let raw: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            (out, ModalInput::Present(raw))
        }
        None => (default.row(0).to_vec(), ModalInput::Default),
    };
    let (m_v, visual_src) = project(
        features.visual.get(entity as usize),
        &params.proj_visual,
        &params.proj_visual_bias,
        &params.default_visual,
    );
    let (m_t, textual_src) = project(
        features.textual.get(entity as usize),
        &params.proj_textual,
        &params.proj_textual_bias,
        &params.default_textual,
    );
    let mut out = vec![0.0f64; width];
    for j in 0..width {
        out[j] = alpha[0] * e_s[j] + alpha[1] * m_v[j] + alpha[2] * m_t[j];
    }
    let tape = FuseTape {
        entity,
        relation,
        alpha,
        modal: [e_s, m_v, m_t],
        visual_src,
        textual_src,
        structure_only: false,
    };
    (out, tape)
}

/// Pushes d(loss)/d(fused vector) back onto the touched parameters.
pub fn fuse_backward(tape: &FuseTape, d_out: &[f64], grads: &mut RetrieverGrads) {
    let e = tape.entity as usize;
    for (j, &d) in d_out.iter().enumerate() {
        grads.structural.add(e, j, tape.alpha[0] * d);
    }
    if tape.structure_only {
        return;
    }
    let push_modality = |alpha: f64,
                             src: &ModalInput,
                             w: &mut GradBuf,
                             b: &mut GradBuf,
                             default: &mut GradBuf| {
        match src {
            ModalInput::Present(x) => {
                for (j, &d) in d_out.iter().enumerate() {
                    let ad = alpha * d;
                    b.add(0, j, ad);
                    for (i, &xi) in x.iter().enumerate() {
                        w.add(i, j, ad * xi);
                    }
                }
            }
            ModalInput::Default => {
                for (j, &d) in d_out.iter().enumerate() {
                    default.add(0, j, alpha * d);
                }
            }
        }
    };
    push_modality(
        tape.alpha[1],
        &tape.visual_src,
        &mut grads.proj_visual,
        &mut grads.proj_visual_bias,
        &mut grads.default_visual,
    );
    push_modality(
        tape.alpha[2],
        &tape.textual_src,
        &mut grads.proj_textual,
        &mut grads.proj_textual_bias,
        &mut grads.default_textual,
    );
    // Gate logits through the softmax Jacobian.
    let a_dot: Vec<f64> = tape
        .modal
        .iter()
        .map(|m| m.iter().zip(d_out).map(|(mi, di)| mi * di).sum::<f64>())
        .collect();
    let mean: f64 = (0..3).map(|k| tape.alpha[k] * a_dot[k]).sum();
    for k in 0..3 {
        grads
            .gate_logits
            .add(tape.relation as usize, k, tape.alpha[k] * (a_dot[k] - mean));
    }
}

/// RotatE energy: −Σ_j |h_j ∘ r_j − t_j| with per-component complex modulus.
pub fn rotate_score(
    head_joint: &[f64],
    relation: u32,
    tail_joint: &[f64],
    params: &RetrieverParams,
) -> f64 {
    let phases = params.relation_phase.row(relation as usize);
    let mut acc = 0.0f64;
    for (j, &theta) in phases.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let h_re = head_joint[2 * j];
        let h_im = head_joint[2 * j + 1];
        let u_re = h_re * c - h_im * s - tail_joint[2 * j];
        let u_im = h_re * s + h_im * c - tail_joint[2 * j + 1];
        acc += (u_re * u_re + u_im * u_im).sqrt();
    }
    -acc
}

/// Backward for `rotate_score`: accumulates the phase gradient and returns
/// (d_head, d_tail) for the fused vectors.
pub fn rotate_backward(
    head_joint: &[f64],
    relation: u32,
    tail_joint: &[f64],
    params: &RetrieverParams,
    d_score: f64,
    grads: &mut RetrieverGrads,
) -> (Vec<f64>, Vec<f64>) {
    let phases = params.relation_phase.row(relation as usize);
    let width = params.width();
    let mut d_head = vec![0.0f64; width];
    let mut d_tail = vec![0.0f64; width];
    for (j, &theta) in phases.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let h_re = head_joint[2 * j];
        let h_im = head_joint[2 * j + 1];
        let hr_re = h_re * c - h_im * s;
        let hr_im = h_re * s + h_im * c;
        let u_re = hr_re - tail_joint[2 * j];
        let u_im = hr_im - tail_joint[2 * j + 1];
        let m = (u_re * u_re + u_im * u_im).sqrt();
        if m < MODULUS_EPS {
            continue; // subgradient 0 at the kink
        }
        let g_re = -d_score * u_re / m;
        let g_im = -d_score * u_im / m;
        d_head[2 * j] += g_re * c + g_im * s;
        d_head[2 * j + 1] += -g_re * s + g_im * c;
        d_tail[2 * j] -= g_re;
        d_tail[2 * j + 1] -= g_im;
        grads
            .relation_phase
            .add(relation as usize, j, g_re * (-hr_im) + g_im * hr_re);
    }
    (d_head, d_tail)
}

/// Fused embeddings of every entity under one relation's gate; shared by
/// full-vocabulary scoring and candidate-pool construction.
#[derive(Debug, Clone)]
pub struct FusedMatrix {
    pub relation: u32,
    width: usize,
    data: Vec<f64>,
}

impl FusedMatrix {
    pub fn entity(&self, e: u32) -> &[f64] {
        let e = e as usize;
        &self.data[e * self.width..(e + 1) * self.width]
    }
}

pub fn fuse_all(params: &RetrieverParams, relation: u32, features: &ModalityFeatureStore) -> FusedMatrix {
    let n = params.n_entities();
    let width = params.width();
    let mut data = Vec::with_capacity(n * width);
    for e in 0..n {
        data.extend(fuse_joint(params, e as u32, relation, features));
    }
    FusedMatrix {
        relation,
        width,
        data,
    }
}

/// KGE scores of every entity for a query, from a precomputed fused matrix.
pub fn score_all_cached(params: &RetrieverParams, fused: &FusedMatrix, query: &Query) -> Vec<f64> {
    debug_assert_eq!(fused.relation, query.relation);
    let known = fused.entity(query.known);
    let n = params.n_entities();
    let mut scores = Vec::with_capacity(n);
    for e in 0..n as u32 {
        let cand = fused.entity(e);
        let s = match query.direction {
            Direction::Tail => rotate_score(known, query.relation, cand, params),
            Direction::Head => rotate_score(cand, query.relation, known, params),
        };
        scores.push(s);
    }
    scores
}

/// KGE scores of every entity for a query.
pub fn score_all(params: &RetrieverParams, query: &Query, features: &ModalityFeatureStore) -> Vec<f64> {
    let fused = fuse_all(params, query.relation, features);
    score_all_cached(params, &fused, query)
}

/// Top-K retrieval shortlist: ids sorted by descending score, ties broken
/// by ascending entity id.
#[derive(Debug, Clone)]
pub struct Shortlist {
    pub entity_ids: Vec<u32>,
    pub scores: Vec<f64>,
}

impl Shortlist {
    pub fn contains(&self, e: u32) -> bool {
        self.entity_ids.contains(&e)
    }
}

pub fn topk_shortlist(scores: &[f64], k: usize) -> Result<Shortlist> {
    if k == 0 || k > scores.len() {
        return Err(RaddError::InvalidArg(format!(
            "shortlist size {k} out of range 1..={}",
            scores.len()
        )));
    }
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let picked_scores = order.iter().map(|&e| scores[e as usize]).collect();
    Ok(Shortlist {
        entity_ids: order,
        scores: picked_scores,
    })
}

/// Uniform negative entity ids excluding the positive answer. The caller
/// scores them in whichever slot the query direction corrupts.
pub fn sample_negatives(n_entities: usize, answer: u32, n: usize, rng: &mut impl Rng) -> Vec<u32> {
    assert!(n_entities >= 2, "cannot sample negatives with |E| < 2");
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = rng.random_range(0..n_entities as u32);
        if e != answer {
            out.push(e);
        }
    }
    out
}

/// The n highest-scoring entities other than the answer.
pub fn hard_negatives(scores: &[f64], answer: u32, n: usize) -> Result<Vec<u32>> {
    if n >= scores.len() {
        return Err(RaddError::InvalidArg(format!(
            "{n} hard negatives requested from {} entities",
            scores.len()
        )));
    }
    let full = topk_shortlist(scores, scores.len())?;
    Ok(full
        .entity_ids
        .into_iter()
        .filter(|&e| e != answer)
        .take(n)
        .collect())
}

/// One positive triple scored against its sampled negatives, with the fuse
/// tapes retained so several losses can share a single backward pass.
pub struct TriplePass {
    direction: Direction,
    relation: u32,
    known_joint: Vec<f64>,
    known_tape: FuseTape,
    answer_joint: Vec<f64>,
    answer_tape: FuseTape,
    negatives: Vec<(u32, Vec<f64>, FuseTape)>,
    s_pos: f64,
    s_neg: Vec<f64>,
}

impl TriplePass {
    pub fn compute(
        params: &RetrieverParams,
        features: &ModalityFeatureStore,
        triple: Triple,
        direction: Direction,
        negatives: &[u32],
    ) -> TriplePass {
        let (known_id, answer_id) = match direction {
            Direction::Tail => (triple.head, triple.tail),
            Direction::Head => (triple.tail, triple.head),
        };
        let r = triple.rel;
        let (known_joint, known_tape) = fuse_with_tape(params, known_id, r, features);
        let (answer_joint, answer_tape) = fuse_with_tape(params, answer_id, r, features);
        let score = |cand: &[f64]| match direction {
            Direction::Tail => rotate_score(&known_joint, r, cand, params),
            Direction::Head => rotate_score(cand, r, &known_joint, params),
        };
        let s_pos = score(&answer_joint);
        let mut negs = Vec::with_capacity(negatives.len());
        let mut s_neg = Vec::with_capacity(negatives.len());
        for &e in negatives {
            let (joint, tape) = fuse_with_tape(params, e, r, features);
            s_neg.push(score(&joint));
            negs.push((e, joint, tape));
        }
        TriplePass {
            direction,
            relation: r,
            known_joint,
            known_tape,
            answer_joint,
            answer_tape,
            negatives: negs,
            s_pos,
            s_neg,
        }
    }

    pub fn s_pos(&self) -> f64 {
        self.s_pos
    }

    pub fn s_neg(&self) -> &[f64] {
        &self.s_neg
    }

    /// One backward pass distributing d(loss)/d(score) contributions for the
    /// positive and each negative score.
    pub fn backward(
        &self,
        params: &RetrieverParams,
        d_s_pos: f64,
        d_s_neg: &[f64],
        grads: &mut RetrieverGrads,
    ) {
        debug_assert_eq!(d_s_neg.len(), self.negatives.len());
        let mut d_known = vec![0.0f64; params.width()];
        let mut rotate_back = |cand_joint: &[f64], d: f64, grads: &mut RetrieverGrads| -> Vec<f64> {
            if d == 0.0 {
                return vec![0.0; params.width()];
            }
            let (dh, dt) = match self.direction {
                Direction::Tail => {
                    rotate_backward(&self.known_joint, self.relation, cand_joint, params, d, grads)
                }
                Direction::Head => {
                    let (dh, dt) = rotate_backward(
                        cand_joint,
                        self.relation,
                        &self.known_joint,
                        params,
                        d,
                        grads,
                    );
                    (dt, dh) // known sits in the tail slot
                }
            };
            for (a, b) in d_known.iter_mut().zip(&dh) {
                *a += b;
            }
            dt
        };
        let d_answer = rotate_back(&self.answer_joint, d_s_pos, grads);
        if d_s_pos != 0.0 {
            fuse_backward(&self.answer_tape, &d_answer, grads);
        }
        for ((_, joint, tape), &d) in self.negatives.iter().zip(d_s_neg) {
            let d_cand = rotate_back(joint, d, grads);
            if d != 0.0 {
                fuse_backward(tape, &d_cand, grads);
            }
        }
        fuse_backward(&self.known_tape, &d_known, grads);
    }
}

/// Output of the self-adversarial negative-sampling loss.
#[derive(Debug, Clone)]
pub struct KgeLossOut {
    pub loss: f64,
    pub s_pos: f64,
    pub s_neg: Vec<f64>,
    /// Softmax weights over the negatives (constants in the gradient).
    pub weights: Vec<f64>,
}

/// Self-adversarial weights wᵢ = softmaxᵢ(α_adv·s⁻ᵢ).
pub fn adversarial_weights(s_neg: &[f64], alpha_adv: f64) -> Vec<f64> {
    softmax(&s_neg.iter().map(|&s| alpha_adv * s).collect::<Vec<f64>>())
}

/// Scalar core of the self-adversarial loss given pre-computed weights:
/// −log σ(γ + s⁺) − Σᵢ wᵢ log σ(−s⁻ᵢ − γ), with the weights treated as
/// constants. Returns (loss, d_s_pos, d_s_neg).
pub fn kge_loss_terms(s_pos: f64, s_neg: &[f64], weights: &[f64], gamma: f64) -> (f64, f64, Vec<f64>) {
    let mut loss = -log_sigmoid(gamma + s_pos);
    for (&s, &w) in s_neg.iter().zip(weights) {
        loss -= w * log_sigmoid(-s - gamma);
    }
    let d_pos = -sigmoid(-(gamma + s_pos));
    let d_neg: Vec<f64> = s_neg
        .iter()
        .zip(weights)
        .map(|(&s, &w)| w * sigmoid(s + gamma))
        .collect();
    (loss, d_pos, d_neg)
}

/// −log σ(γ + s⁺) − Σᵢ wᵢ log σ(−s⁻ᵢ − γ) with wᵢ = softmaxᵢ(α_adv·s⁻ᵢ).
///
/// `fixed_weights` pins wᵢ to externally supplied constants; the
/// finite-difference harness uses it to check the gradient under the same
/// detached-weights semantics the analytic gradient implements.
pub fn kge_loss(
    pass: &TriplePass,
    params: &RetrieverParams,
    gamma: f64,
    alpha_adv: f64,
    fixed_weights: Option<&[f64]>,
    grad_scale: f64,
    grads: Option<&mut RetrieverGrads>,
) -> Result<KgeLossOut> {
    if pass.s_neg.is_empty() {
        return Err(RaddError::InvalidArg("kge_loss needs at least one negative".into()));
    }
    let weights: Vec<f64> = match fixed_weights {
        Some(w) => {
            if w.len() != pass.s_neg.len() {
                return Err(RaddError::DimMismatch("fixed weight count".into()));
            }
            w.to_vec()
        }
        None => adversarial_weights(&pass.s_neg, alpha_adv),
    };
    let (loss, d_pos, mut d_neg) = kge_loss_terms(pass.s_pos, &pass.s_neg, &weights, gamma);
    if let Some(grads) = grads {
        for d in &mut d_neg {
            *d *= grad_scale;
        }
        pass.backward(params, d_pos * grad_scale, &d_neg, grads);
    }
    Ok(KgeLossOut {
        loss,
        s_pos: pass.s_pos,
        s_neg: pass.s_neg.clone(),
        weights,
    })
}

/// Margin ranking hinge max(0, m − (s⁺ − s⁻)).
///
/// Returns the loss and the (d_s_pos, d_s_neg) subgradient, zero in the
/// inactive region including at the kink.
pub fn rank_margin_loss(s_pos: f64, s_neg: f64, margin: f64) -> (f64, (f64, f64)) {
    let gap = margin - (s_pos - s_neg);
    if gap > 0.0 {
        (gap, (-1.0, 1.0))
    } else {
        (0.0, (0.0, 0.0))
    }
}

#[cfg(test)]
mod tests;
