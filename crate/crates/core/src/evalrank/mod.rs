//! Diff-Rerank inference and filtered ranking metrics.
//!
//! The retriever commits to a hard top-K shortlist; the denoiser reranks
//! within it. Entities outside the shortlist are ordered behind every
//! member by a two-tier comparison rather than a numeric sentinel, so no
//! finite constant can collide with extreme log-probabilities.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{corrupt, denoise_logits, assemble_input, DenoiserParams, NoiseSchedule};
use crate::error::{RaddError, Result};
use crate::kgdata::{
    make_queries, Direction, FilterIndex, KnowledgeGraph, ModalityFeatureStore, Query, Split,
};
use crate::numkernel::log_softmax;
use crate::retriever::{fuse_joint, score_all, topk_shortlist, RetrieverParams};

/// Which scoring path evaluation uses. `StructureOnly`, `NoDistill`, and
/// `TailOnly` are training-time ablations and score like `Full`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Full,
    RetrieverOnly,
    DenoiserOnly,
    StructureOnly,
    NoDistill,
    TailOnly,
}

impl AblationMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => AblationMode::Full,
            "retriever-only" => AblationMode::RetrieverOnly,
            "denoiser-only" => AblationMode::DenoiserOnly,
            "structure-only" => AblationMode::StructureOnly,
            "no-distill" => AblationMode::NoDistill,
            "tail-only" => AblationMode::TailOnly,
            _ => {
                return Err(RaddError::InvalidArg(format!(
                    "unknown mode '{s}' (full, retriever-only, denoiser-only, structure-only, no-distill, tail-only)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::RetrieverOnly => "retriever-only",
            AblationMode::DenoiserOnly => "denoiser-only",
            AblationMode::StructureOnly => "structure-only",
            AblationMode::NoDistill => "no-distill",
            AblationMode::TailOnly => "tail-only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// One denoiser evaluation at t = T with x_T = MASK (default).
    SinglePass,
    /// Ancestral loop t = T..1 restricted to the shortlist.
    Iterative,
}

/// Final per-entity scores with the shortlist tier. Ordering: members
/// first, then by descending score, ties by ascending id.
#[derive(Debug, Clone)]
pub struct RankedScores {
    pub scores: Vec<f64>,
    /// None means every entity is in-tier (ungated orderings).
    pub in_shortlist: Option<Vec<bool>>,
}

impl RankedScores {
    pub fn ungated(scores: Vec<f64>) -> Self {
        RankedScores {
            scores,
            in_shortlist: None,
        }
    }

    fn tier(&self, e: u32) -> bool {
        self.in_shortlist
            .as_ref()
            .map(|m| m[e as usize])
            .unwrap_or(true)
    }

    /// Strict precedence of entity a over entity b.
    pub fn beats(&self, a: u32, b: u32) -> bool {
        let (ta, tb) = (self.tier(a), self.tier(b));
        if ta != tb {
            return ta;
        }
        let (sa, sb) = (self.scores[a as usize], self.scores[b as usize]);
        if sa != sb {
            return sa > sb;
        }
        a < b
    }

    /// Entity ids in ranked order (best first).
    pub fn ranking(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.scores.len() as u32).collect();
        order.sort_by(|&a, &b| {
            if self.beats(a, b) {
                std::cmp::Ordering::Less
            } else if self.beats(b, a) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        order
    }
}

fn mix_seed(base: u64, q: &Query) -> u64 {
    // splitmix64 over the query identity, so per-query streams are stable
    // under any evaluation order.
    let mut z = base
        ^ (q.known as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ ((q.relation as u64) << 32)
        ^ ((q.direction.index() as u64) << 17)
        ^ ((q.answer as u64).wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn denoiser_inputs(
    retriever: &RetrieverParams,
    query: &Query,
    features: &ModalityFeatureStore,
) -> (Vec<f64>, Vec<f64>) {
    let ctx = fuse_joint(retriever, query.known, query.relation, features);
    let relvec = retriever.relation_vector(query.relation);
    (ctx, relvec)
}

/// Denoiser log-scores from a single masked forward pass at t = T.
fn single_pass_log_scores(
    retriever: &RetrieverParams,
    denoiser: &DenoiserParams,
    features: &ModalityFeatureStore,
    query: &Query,
    t_steps: u32,
) -> Result<Vec<f64>> {
    let (ctx, relvec) = denoiser_inputs(retriever, query, features);
    let input = assemble_input(
        denoiser,
        &ctx,
        &relvec,
        denoiser.mask_id(),
        t_steps,
        query.direction,
    )?;
    Ok(log_softmax(&denoise_logits(denoiser, &input)?))
}

/// Diff-Rerank: shortlist from the retriever, denoiser scores gated to it.
#[allow(clippy::too_many_arguments)]
pub fn diff_rerank(
    retriever: &RetrieverParams,
    denoiser: &DenoiserParams,
    features: &ModalityFeatureStore,
    query: &Query,
    k: usize,
    t_steps: u32,
    rho0: f64,
    inference: InferenceMode,
    seed: u64,
) -> Result<RankedScores> {
    let kge_scores = score_all(retriever, query, features);
    let shortlist = topk_shortlist(&kge_scores, k)?;
    let mut mask = vec![false; kge_scores.len()];
    for &e in &shortlist.entity_ids {
        mask[e as usize] = true;
    }
    let scores = match inference {
        InferenceMode::SinglePass => {
            single_pass_log_scores(retriever, denoiser, features, query, t_steps)?
        }
        InferenceMode::Iterative => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, query));
            let (ctx, relvec) = denoiser_inputs(retriever, query, features);
            let schedule = NoiseSchedule::new(t_steps, rho0)?;
            let n = denoiser.n_entities();
            let mut xt = denoiser.mask_id();
            let mut final_logp: Option<Vec<f64>> = None;
            for t in (1..=t_steps).rev() {
                let input = assemble_input(denoiser, &ctx, &relvec, xt, t, query.direction)?;
                let logp = log_softmax(&denoise_logits(denoiser, &input)?);
                // Posterior over x0 restricted to the shortlist.
                let member_probs: Vec<f64> = shortlist
                    .entity_ids
                    .iter()
                    .map(|&e| logp[e as usize].exp())
                    .collect();
                let total: f64 = member_probs.iter().sum();
                let x0_hat = if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut picked = shortlist.entity_ids[0];
                    for (&e, &p) in shortlist.entity_ids.iter().zip(&member_probs) {
                        if u < p {
                            picked = e;
                            break;
                        }
                        u -= p;
                        picked = e;
                    }
                    picked
                } else {
                    shortlist.entity_ids[0]
                };
                if t == 1 {
                    final_logp = Some(logp);
                    break;
                }
                // x_{t-1} ~ q(x_{t-1} | x0_hat): predict the clean token,
                // then re-noise one step shallower.
                xt = corrupt(&schedule, x0_hat, t - 1, n, &mut rng)?.xt;
            }
            final_logp.expect("t_steps >= 1 guarantees a final pass")
        }
    };
    Ok(RankedScores {
        scores,
        in_shortlist: Some(mask),
    })
}

/// Filtered rank: 1 + the number of surviving entities strictly preceding
/// the answer. Survivors exclude every other true completion of the query.
pub fn filtered_rank(ranked: &RankedScores, query: &Query, filter: &FilterIndex) -> usize {
    let mut rank = 1usize;
    for e in 0..ranked.scores.len() as u32 {
        if e == query.answer {
            continue;
        }
        if filter.contains(query.known, query.relation, query.direction, e) {
            continue;
        }
        if ranked.beats(e, query.answer) {
            rank += 1;
        }
    }
    rank
}

/// Unfiltered rank, for the filtering-never-worsens property.
pub fn unfiltered_rank(ranked: &RankedScores, query: &Query) -> usize {
    let mut rank = 1usize;
    for e in 0..ranked.scores.len() as u32 {
        if e != query.answer && ranked.beats(e, query.answer) {
            rank += 1;
        }
    }
    rank
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricRow {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub count: usize,
}

impl MetricRow {
    fn push(&mut self, rank: usize) {
        self.mrr += 1.0 / rank as f64;
        self.h1 += (rank <= 1) as u32 as f64;
        self.h3 += (rank <= 3) as u32 as f64;
        self.h10 += (rank <= 10) as u32 as f64;
        self.count += 1;
    }

    fn finalize(&mut self) {
        if self.count > 0 {
            let n = self.count as f64;
            self.mrr /= n;
            self.h1 /= n;
            self.h3 /= n;
            self.h10 /= n;
        }
    }
}

/// Filtered MRR and Hits@K, overall and per prediction direction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub overall: MetricRow,
    pub tail: MetricRow,
    pub head: MetricRow,
}

impl MetricsReport {
    fn from_ranks(ranks: &[(Direction, usize)]) -> MetricsReport {
        let mut report = MetricsReport::default();
        for &(dir, rank) in ranks {
            report.overall.push(rank);
            match dir {
                Direction::Tail => report.tail.push(rank),
                Direction::Head => report.head.push(rank),
            }
        }
        report.overall.finalize();
        report.tail.finalize();
        report.head.finalize();
        report
    }

    /// Tab-separated table, metrics as percentages with two decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("split\tMRR\tH@1\tH@3\tH@10\tqueries\n");
        for (name, row) in [("overall", self.overall), ("head", self.head), ("tail", self.tail)] {
            out.push_str(&format!(
                "{name}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
                row.mrr * 100.0,
                row.h1 * 100.0,
                row.h3 * 100.0,
                row.h10 * 100.0,
                row.count
            ));
        }
        out
    }

    /// Flat key=value form of the same table.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (name, row) in [("overall", self.overall), ("head", self.head), ("tail", self.tail)] {
            out.push_str(&format!("{name}.mrr={:.2}\n", row.mrr * 100.0));
            out.push_str(&format!("{name}.h1={:.2}\n", row.h1 * 100.0));
            out.push_str(&format!("{name}.h3={:.2}\n", row.h3 * 100.0));
            out.push_str(&format!("{name}.h10={:.2}\n", row.h10 * 100.0));
            out.push_str(&format!("{name}.queries={}\n", row.count));
        }
        out
    }
}

/// Everything evaluation needs beyond the model states.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub split: Split,
    pub mode: AblationMode,
    pub inference: InferenceMode,
    pub shortlist_k: usize,
    pub t_steps: u32,
    pub rho0: f64,
    pub seed: u64,
    pub threads: usize,
}

/// Final scores for one query under one ablation mode.
pub fn mode_scores(
    retriever: &RetrieverParams,
    denoiser: &DenoiserParams,
    features: &ModalityFeatureStore,
    query: &Query,
    settings: &EvalSettings,
) -> Result<RankedScores> {
    match settings.mode {
        AblationMode::RetrieverOnly => Ok(RankedScores::ungated(score_all(
            retriever, query, features,
        ))),
        AblationMode::DenoiserOnly => Ok(RankedScores::ungated(single_pass_log_scores(
            retriever,
            denoiser,
            features,
            query,
            settings.t_steps,
        )?)),
        _ => diff_rerank(
            retriever,
            denoiser,
            features,
            query,
            settings.shortlist_k,
            settings.t_steps,
            settings.rho0,
            settings.inference,
            settings.seed,
        ),
    }
}

/// Filtered metrics over one split; embarrassingly parallel over queries.
pub fn evaluate(
    kg: &KnowledgeGraph,
    features: &ModalityFeatureStore,
    retriever: &RetrieverParams,
    denoiser: &DenoiserParams,
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    let queries = make_queries(kg, settings.split);
    if queries.is_empty() {
        return Err(RaddError::InvalidArg("evaluation split is empty".into()));
    }
    let ranks = rank_queries(kg, features, retriever, denoiser, settings, &queries)?;
    Ok(MetricsReport::from_ranks(&ranks))
}

pub(crate) fn rank_queries(
    kg: &KnowledgeGraph,
    features: &ModalityFeatureStore,
    retriever: &RetrieverParams,
    denoiser: &DenoiserParams,
    settings: &EvalSettings,
    queries: &[Query],
) -> Result<Vec<(Direction, usize)>> {
    let worker = |chunk: &[Query]| -> Result<Vec<(Direction, usize)>> {
        let mut out = Vec::with_capacity(chunk.len());
        for q in chunk {
            let ranked = mode_scores(retriever, denoiser, features, q, settings)?;
            out.push((q.direction, filtered_rank(&ranked, q, &kg.filter)));
        }
        Ok(out)
    };
    let threads = settings.threads.max(1);
    if threads == 1 || queries.len() < 2 * threads {
        return worker(queries);
    }
    let chunk_size = queries.len().div_ceil(threads);
    let results: Vec<Result<Vec<(Direction, usize)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = queries
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(move || worker(chunk)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut ranks = Vec::with_capacity(queries.len());
    for r in results {
        ranks.extend(r?);
    }
    Ok(ranks)
}

/// Filtered rank of one query under the retriever-only, denoiser-only, and
/// full scoring paths, for qualitative case studies.
#[derive(Debug, Clone, Copy)]
pub struct CaseTrace {
    pub query: Query,
    pub retriever_rank: usize,
    pub denoiser_rank: usize,
    pub full_rank: usize,
}

impl CaseTrace {
    fn query_repr(&self, kg: &KnowledgeGraph) -> String {
        let q = &self.query;
        format!(
            "({}, {}, {}) -> {}",
            match q.direction {
                Direction::Tail => kg.entities.label(q.known),
                Direction::Head => "?",
            },
            kg.relations.label(q.relation),
            match q.direction {
                Direction::Tail => "?",
                Direction::Head => kg.entities.label(q.known),
            },
            kg.entities.label(q.answer),
        )
    }

    /// One `query\tmode\trank` row per scoring path.
    pub fn to_tsv_rows(&self, kg: &KnowledgeGraph) -> String {
        let q = self.query_repr(kg);
        format!(
            "{q}\tretriever-only\t{}\n{q}\tdenoiser-only\t{}\n{q}\tfull\t{}\n",
            self.retriever_rank, self.denoiser_rank, self.full_rank
        )
    }
}

pub fn case_trace(
    kg: &KnowledgeGraph,
    features: &ModalityFeatureStore,
    retriever: &RetrieverParams,
    denoiser: &DenoiserParams,
    query: &Query,
    settings: &EvalSettings,
) -> Result<CaseTrace> {
    let rank_for = |mode: AblationMode| -> Result<usize> {
        let s = EvalSettings { mode, ..*settings };
        let ranked = mode_scores(retriever, denoiser, features, query, &s)?;
        Ok(filtered_rank(&ranked, query, &kg.filter))
    };
    Ok(CaseTrace {
        query: *query,
        retriever_rank: rank_for(AblationMode::RetrieverOnly)?,
        denoiser_rank: rank_for(AblationMode::DenoiserOnly)?,
        full_rank: rank_for(AblationMode::Full)?,
    })
}
