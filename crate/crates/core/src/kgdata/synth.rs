//! Deterministic synthetic knowledge graphs with learnable cluster structure.
//!
//! Entities live in latent cells; sibling cells pair into coarse clusters.
//! Each relation permutes the coarse clusters and picks one target cell
//! inside the permuted cluster per source cell, with a small violation
//! rate. The coarse permutation is smooth structure a geometric scorer can
//! capture; which sibling cell a relation prefers is sharp conditional
//! structure that favours a free-form conditional model. Modality features
//! are noisy copies of a per-cell base vector, so cell identity can be
//! recovered from either modality.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{RaddError, Result};
use crate::kgdata::features::{ModalityFeatureStore, ModalityFeatures};
use crate::kgdata::graph::{KnowledgeGraph, Triple, Vocab};

/// Fraction of triples whose tail ignores the cluster structure entirely.
const VIOLATION_RATE: f64 = 0.05;
/// Probability the tail lands in the relation's preferred cell rather than
/// its sibling, given no violation.
const CELL_PREFERENCE: f64 = 0.85;

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_triples: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
}

/// Generates a KG plus matching visual/textual feature stores.
///
/// Byte-identical for identical arguments. Every entity and relation occurs
/// in at least one triple, and entity ids equal the first-occurrence order
/// over train‖valid‖test, so loading the emitted files reproduces the same
/// id assignment.
pub fn synth_kg(spec: SynthSpec) -> Result<(KnowledgeGraph, ModalityFeatureStore)> {
    let SynthSpec {
        seed,
        n_entities,
        n_relations,
        n_triples,
        feature_dim,
        feature_noise,
    } = spec;
    if n_entities < 4 {
        return Err(RaddError::InfeasibleSynth(format!(
            "need at least 4 entities, got {n_entities}"
        )));
    }
    if n_relations < 1 {
        return Err(RaddError::InfeasibleSynth("need at least 1 relation".into()));
    }
    if n_triples < 3 {
        return Err(RaddError::InfeasibleSynth(
            "need at least 3 triples for a 3-way split".into(),
        ));
    }
    let capacity = n_entities
        .saturating_mul(n_entities)
        .saturating_mul(n_relations);
    if n_triples > capacity {
        return Err(RaddError::InfeasibleSynth(format!(
            "{n_triples} triples exceed the {capacity} distinct (h, r, t) combinations"
        )));
    }
    if n_triples < n_entities.max(n_relations) {
        return Err(RaddError::InfeasibleSynth(format!(
            "{n_triples} triples cannot cover {n_entities} entities and {n_relations} relations"
        )));
    }
    if feature_dim == 0 {
        return Err(RaddError::InfeasibleSynth("feature_dim must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&feature_noise) {
        return Err(RaddError::InfeasibleSynth(format!(
            "feature_noise must be a fraction in [0, 1], got {feature_noise}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // An even number of cells, paired into coarse clusters: cells c and
    // c + n_coarse are siblings forming coarse cluster c % n_coarse.
    let n_cells = {
        let c = ((n_entities as f64).sqrt().round() as usize).max(2);
        if c % 2 == 0 {
            c
        } else {
            c + 1
        }
    };
    let n_coarse = n_cells / 2;
    let cell = |e: usize| e % n_cells;
    let coarse = |cell: usize| cell % n_coarse;

    // Per relation: a coarse-cluster permutation plus one preferred target
    // cell per source cell.
    let coarse_perm: Vec<Vec<usize>> = (0..n_relations)
        .map(|_| {
            let mut p: Vec<usize> = (0..n_coarse).collect();
            shuffle(&mut p, &mut rng);
            p
        })
        .collect();
    let preferred_half: Vec<Vec<usize>> = (0..n_relations)
        .map(|_| (0..n_cells).map(|_| rng.random_range(0..2)).collect())
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for e in 0..n_entities {
        members[cell(e)].push(e);
    }

    let mut seen: HashSet<Triple> = HashSet::new();
    let mut triples: Vec<Triple> = Vec::with_capacity(n_triples);
    let push = |t: Triple, seen: &mut HashSet<Triple>, triples: &mut Vec<Triple>| -> bool {
        if seen.insert(t) {
            triples.push(t);
            true
        } else {
            false
        }
    };
    let sample_tail = |head: usize, rel: usize, rng: &mut ChaCha8Rng| -> usize {
        if rng.random::<f64>() < VIOLATION_RATE {
            return rng.random_range(0..n_entities);
        }
        let src = cell(head);
        let target_coarse = coarse_perm[rel][coarse(src)];
        let preferred = target_coarse + n_coarse * preferred_half[rel][src];
        let sibling = target_coarse + n_coarse * (1 - preferred_half[rel][src]);
        let target = if rng.random::<f64>() < CELL_PREFERENCE {
            preferred
        } else {
            sibling
        };
        members[target][rng.random_range(0..members[target].len())]
    };

    // Coverage pass: every entity appears as a head, cycling relations so
    // every relation occurs too.
    for e in 0..n_entities.max(n_relations) {
        let head = e % n_entities;
        let rel = e % n_relations;
        loop {
            let tail = sample_tail(head, rel, &mut rng);
            let t = Triple::new(head as u32, rel as u32, tail as u32);
            if push(t, &mut seen, &mut triples) {
                break;
            }
        }
    }

    // Fill with cluster-consistent random triples; fall back to systematic
    // enumeration if rejection sampling stalls near saturation.
    let mut attempts = 0usize;
    let attempt_cap = 200 * n_triples + 10_000;
    while triples.len() < n_triples && attempts < attempt_cap {
        attempts += 1;
        let head = rng.random_range(0..n_entities);
        let rel = rng.random_range(0..n_relations);
        let tail = sample_tail(head, rel, &mut rng);
        push(
            Triple::new(head as u32, rel as u32, tail as u32),
            &mut seen,
            &mut triples,
        );
    }
    'fill: for rel in 0..n_relations {
        for head in 0..n_entities {
            for tail in 0..n_entities {
                if triples.len() >= n_triples {
                    break 'fill;
                }
                push(
                    Triple::new(head as u32, rel as u32, tail as u32),
                    &mut seen,
                    &mut triples,
                );
            }
        }
    }
    debug_assert_eq!(triples.len(), n_triples);

    // 80/10/10 split over the unique triples.
    shuffle(&mut triples, &mut rng);
    let n_valid = (n_triples / 10).max(1);
    let n_test = (n_triples / 10).max(1);
    let n_train = n_triples - n_valid - n_test;
    let train: Vec<Triple> = triples[..n_train].to_vec();
    let valid: Vec<Triple> = triples[n_train..n_train + n_valid].to_vec();
    let test: Vec<Triple> = triples[n_train + n_valid..].to_vec();

    // Relabel ids to first-occurrence order over train‖valid‖test so a
    // round trip through the TSV files reproduces the same ids.
    let mut ent_perm = vec![u32::MAX; n_entities]; // old id -> new id
    let mut rel_perm = vec![u32::MAX; n_relations];
    let mut next_e = 0u32;
    let mut next_r = 0u32;
    for t in train.iter().chain(&valid).chain(&test) {
        for e in [t.head, t.tail] {
            if ent_perm[e as usize] == u32::MAX {
                ent_perm[e as usize] = next_e;
                next_e += 1;
            }
        }
        if rel_perm[t.rel as usize] == u32::MAX {
            rel_perm[t.rel as usize] = next_r;
            next_r += 1;
        }
    }
    debug_assert_eq!(next_e as usize, n_entities);
    debug_assert_eq!(next_r as usize, n_relations);
    let remap = |ts: Vec<Triple>| -> Vec<Triple> {
        ts.into_iter()
            .map(|t| {
                Triple::new(
                    ent_perm[t.head as usize],
                    rel_perm[t.rel as usize],
                    ent_perm[t.tail as usize],
                )
            })
            .collect()
    };
    let (train, valid, test) = (remap(train), remap(valid), remap(test));

    let mut entities = Vocab::new();
    for i in 0..n_entities {
        entities.intern(&format!("e{i:05}"));
    }
    let mut relations = Vocab::new();
    for i in 0..n_relations {
        relations.intern(&format!("r{i:03}"));
    }

    // Cluster base vectors, then per-entity noisy copies, indexed by the
    // relabeled ids.
    let gen_modality = |rng: &mut ChaCha8Rng| -> ModalityFeatures {
        let bases: Vec<Vec<f32>> = (0..n_cells)
            .map(|_| (0..feature_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let mut feats = ModalityFeatures::new_absent(n_entities, feature_dim);
        let mut rows: Vec<Vec<f32>> = vec![Vec::new(); n_entities];
        for old in 0..n_entities {
            let base = &bases[cell(old)];
            let row: Vec<f32> = base
                .iter()
                .map(|&b| b + feature_noise as f32 * rng.random_range(-1.0f32..1.0))
                .collect();
            rows[ent_perm[old] as usize] = row;
        }
        for (e, row) in rows.iter().enumerate() {
            feats.set(e, row).expect("generated features are finite");
        }
        feats
    };
    let visual = gen_modality(&mut rng);
    let textual = gen_modality(&mut rng);

    let kg = KnowledgeGraph::new(entities, relations, train, valid, test)?;
    Ok((kg, ModalityFeatureStore { visual, textual }))
}

/// Fisher–Yates with the generator's own stream, so the split is part of
/// the deterministic output.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
