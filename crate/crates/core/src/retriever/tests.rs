use super::*;
use crate::kgdata::ModalityFeatures;
use crate::numkernel::grad_check;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn store_with_features(n: usize, d_v: usize, d_t: usize, rng: &mut impl Rng) -> ModalityFeatureStore {
    let mut visual = ModalityFeatures::new_absent(n, d_v);
    let mut textual = ModalityFeatures::new_absent(n, d_t);
    for e in 0..n {
        // Leave every fourth entity without a visual feature and every fifth
        // without a textual one, exercising the default-vector path.
        if e % 4 != 3 {
            let row: Vec<f32> = (0..d_v).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            visual.set(e, &row).unwrap();
        }
        if e % 5 != 4 {
            let row: Vec<f32> = (0..d_t).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            textual.set(e, &row).unwrap();
        }
    }
    ModalityFeatureStore { visual, textual }
}

fn setup(seed: u64, n: usize, dim: usize) -> (RetrieverParams, ModalityFeatureStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_v, d_t) = (3, 4);
    let params = RetrieverParams::init(n, 3, dim, d_v, d_t, false, &mut rng);
    let features = store_with_features(n, d_v, d_t, &mut rng);
    (params, features)
}

#[test]
fn uniform_gate_averages_modalities() {
    let (mut params, features) = setup(1, 8, 2);
    // gate logits already zero after init
    let out = fuse_joint(&params, 0, 0, &features);
    let alpha = params.gate(0);
    assert!((alpha[0] - 1.0 / 3.0).abs() < 1e-12);
    // fused = mean of the three modality vectors
    let (_, tape) = fuse_with_tape(&params, 0, 0, &features);
    for j in 0..params.width() {
        let mean = (tape.modal[0][j] + tape.modal[1][j] + tape.modal[2][j]) / 3.0;
        assert!((out[j] - mean).abs() < 1e-12);
    }

    // Saturated gate picks the structural embedding alone.
    params.gate_logits.set(0, 0, 20.0);
    params.gate_logits.set(0, 1, -20.0);
    params.gate_logits.set(0, 2, -20.0);
    let out = fuse_joint(&params, 0, 0, &features);
    for j in 0..params.width() {
        assert!((out[j] - params.structural.get(0, j)).abs() < 1e-6);
    }
}

#[test]
fn hand_computed_three_term_sum() {
    // d = 1, hand-picked vectors, logits (1, 0, 0).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = RetrieverParams::init(1, 1, 1, 2, 2, false, &mut rng);
    params.structural.set(0, 0, 1.0);
    params.structural.set(0, 1, 2.0);
    params.gate_logits.set(0, 0, 1.0);
    // proj_visual: x=[1,0] picks W row 0; set W and bias by hand.
    for (w, vals) in [(&mut params.proj_visual, [[0.5, -0.5], [0.0, 0.0]])] {
        for (r, row) in vals.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                w.set(r, c, *v);
            }
        }
    }
    params.proj_visual_bias.set(0, 0, 0.25);
    params.proj_visual_bias.set(0, 1, 0.25);
    for c in 0..2 {
        params.proj_textual.set(0, c, 0.0);
        params.proj_textual.set(1, c, 0.0);
        params.proj_textual_bias.set(0, c, 1.0);
    }
    let mut visual = ModalityFeatures::new_absent(1, 2);
    visual.set(0, &[1.0, 0.0]).unwrap();
    let mut textual = ModalityFeatures::new_absent(1, 2);
    textual.set(0, &[9.0, 9.0]).unwrap();
    let features = ModalityFeatureStore { visual, textual };

    // alpha = softmax([1,0,0]) = (e, 1, 1)/(e+2)
    let e = 1f64.exp();
    let a0 = e / (e + 2.0);
    let a1 = 1.0 / (e + 2.0);
    // m_v = [0.75, -0.25], m_t = [1, 1]
    let expect0 = a0 * 1.0 + a1 * 0.75 + a1 * 1.0;
    let expect1 = a0 * 2.0 + a1 * (-0.25) + a1 * 1.0;
    let out = fuse_joint(&params, 0, 0, &features);
    assert!((out[0] - expect0).abs() < 1e-6, "{} vs {expect0}", out[0]);
    assert!((out[1] - expect1).abs() < 1e-6, "{} vs {expect1}", out[1]);
}

#[test]
fn gate_is_a_simplex_point_for_every_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let mut params = RetrieverParams::init(2, 5, 2, 2, 2, false, &mut rng);
        for r in 0..5 {
            for k in 0..3 {
                params.gate_logits.set(r, k, rng.random_range(-10.0..10.0));
            }
        }
        for r in 0..5 {
            let a = params.gate(r as u32);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn structure_only_pins_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = RetrieverParams::init(4, 2, 2, 3, 3, true, &mut rng);
    params.gate_logits.set(0, 1, 5.0);
    assert_eq!(params.gate(0), [1.0, 0.0, 0.0]);
    let features = store_with_features(4, 3, 3, &mut rng);
    let out = fuse_joint(&params, 1, 0, &features);
    assert_eq!(out, params.structural.row(1).to_vec());
}

#[test]
fn rotate_identity_and_pi() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = RetrieverParams::init(2, 1, 2, 2, 2, false, &mut rng);
    for j in 0..2 {
        params.relation_phase.set(0, j, 0.0);
    }
    let v = vec![0.3, -0.7, 1.1, 0.2];
    assert_eq!(rotate_score(&v, 0, &v, &params), 0.0);

    // Phase π rotates (1, 0) onto (−1, 0); the stored phase is f32-rounded,
    // which bounds the residual at ~1e-7.
    let mut params1 = RetrieverParams::init(2, 1, 1, 2, 2, false, &mut rng);
    params1.relation_phase.set(0, 0, std::f64::consts::PI);
    let h = vec![1.0, 0.0];
    let t = vec![-1.0, 0.0];
    let s = rotate_score(&h, 0, &t, &params1);
    assert!(s.abs() < 1e-6, "{s}");
}

#[test]
fn rotate_matches_complex_arithmetic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let mut params = RetrieverParams::init(2, 1, 2, 2, 2, false, &mut rng);
        for j in 0..2 {
            params.relation_phase.set(0, j, rng.random_range(-3.0..3.0));
        }
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        // Oracle in explicit complex arithmetic.
        let mut expect = 0.0;
        for j in 0..2 {
            let (hr, hi) = (h[2 * j], h[2 * j + 1]);
            let theta = params.relation_phase.get(0, j);
            let (rr, ri) = (theta.cos(), theta.sin());
            let pr = hr * rr - hi * ri - t[2 * j];
            let pi = hr * ri + hi * rr - t[2 * j + 1];
            expect -= (pr * pr + pi * pi).sqrt();
        }
        let got = rotate_score(&h, 0, &t, &params);
        assert!((got - expect).abs() < 1e-12);
    }
}

#[test]
fn rotate_score_nonpositive_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let dim = rng.random_range(1..4);
        let mut params = RetrieverParams::init(2, 1, dim, 2, 2, false, &mut rng);
        for j in 0..dim {
            params.relation_phase.set(0, j, rng.random_range(-7.0..7.0));
        }
        let h: Vec<f64> = (0..2 * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..2 * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert!(rotate_score(&h, 0, &t, &params) <= 0.0);
    }
}

#[test]
fn inverse_relation_symmetry() {
    // rotate_score(h, θ, t) == rotate_score(t, −θ, h)
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let dim = 3;
        let mut params = RetrieverParams::init(2, 2, dim, 2, 2, false, &mut rng);
        for j in 0..dim {
            let theta = rng.random_range(-3.0..3.0);
            params.relation_phase.set(0, j, theta);
            params.relation_phase.set(1, j, -theta);
        }
        let h: Vec<f64> = (0..2 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..2 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = rotate_score(&h, 0, &t, &params);
        let b = rotate_score(&t, 1, &h, &params);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn score_all_consistent_with_individual_calls() {
    let (params, features) = setup(20, 20, 3);
    let q = Query {
        known: 4,
        relation: 1,
        direction: Direction::Tail,
        answer: 7,
    };
    let scores = score_all(&params, &q, &features);
    assert_eq!(scores.len(), 20);
    let known = fuse_joint(&params, 4, 1, &features);
    for e in 0..20u32 {
        let cand = fuse_joint(&params, e, 1, &features);
        let expect = rotate_score(&known, 1, &cand, &params);
        assert_eq!(scores[e as usize], expect);
    }

    // Head direction puts the candidate in the head slot.
    let qh = Query {
        known: 4,
        relation: 1,
        direction: Direction::Head,
        answer: 7,
    };
    let scores_h = score_all(&params, &qh, &features);
    let argmax = scores_h
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    // Exhaustive per-entity oracle.
    let mut best = (0usize, f64::NEG_INFINITY);
    for e in 0..20u32 {
        let cand = fuse_joint(&params, e, 1, &features);
        let s = rotate_score(&cand, 1, &known, &params);
        if s > best.1 {
            best = (e as usize, s);
        }
    }
    assert_eq!(argmax, best.0);
}

#[test]
fn score_all_is_permutation_equivariant() {
    let (params, features) = setup(33, 10, 2);
    let n = 10usize;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    // Relabeled copy: entity perm[e] of the new model is entity e of the old.
    let mut permuted = params.clone();
    let mut vis = ModalityFeatures::new_absent(n, features.visual.dim());
    let mut txt = ModalityFeatures::new_absent(n, features.textual.dim());
    for e in 0..n {
        let pe = perm[e] as usize;
        for j in 0..params.width() {
            permuted.structural.set(pe, j, params.structural.get(e, j));
        }
        if let Some(row) = features.visual.get(e) {
            vis.set(pe, row).unwrap();
        }
        if let Some(row) = features.textual.get(e) {
            txt.set(pe, row).unwrap();
        }
    }
    let pfeatures = ModalityFeatureStore { visual: vis, textual: txt };
    let q = Query {
        known: 2,
        relation: 0,
        direction: Direction::Tail,
        answer: 5,
    };
    let pq = Query {
        known: perm[2],
        relation: 0,
        direction: Direction::Tail,
        answer: perm[5],
    };
    let base = score_all(&params, &q, &features);
    let permuted_scores = score_all(&permuted, &pq, &pfeatures);
    for e in 0..n {
        assert_eq!(base[e], permuted_scores[perm[e] as usize]);
    }
}

#[test]
fn topk_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scores: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
    let sl = topk_shortlist(&scores, 10).unwrap();
    let mut oracle: Vec<u32> = (0..100u32).collect();
    oracle.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    assert_eq!(sl.entity_ids, oracle[..10].to_vec());
    for w in sl.scores.windows(2) {
        assert!(w[0] >= w[1]);
    }

    // K = 1 is the argmax with lowest-id tie-breaking; K = n is a full sort.
    let tied = vec![1.0, 3.0, 3.0, 0.0];
    assert_eq!(topk_shortlist(&tied, 1).unwrap().entity_ids, vec![1]);
    assert_eq!(topk_shortlist(&tied, 4).unwrap().entity_ids, vec![1, 2, 0, 3]);
    assert!(topk_shortlist(&tied, 0).is_err());
    assert!(topk_shortlist(&tied, 5).is_err());
}

#[test]
fn negatives_exclude_answer() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let negs = sample_negatives(2, 1, 50, &mut rng);
    assert!(negs.iter().all(|&e| e == 0));
    assert_eq!(sample_negatives(50, 3, 128, &mut rng).len(), 128);
}

#[test]
fn negatives_uniform_over_complement() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 10usize;
    let answer = 4u32;
    let draws = 100_000usize;
    let mut counts = vec![0usize; n];
    for e in sample_negatives(n, answer, draws, &mut rng) {
        counts[e as usize] += 1;
    }
    assert_eq!(counts[answer as usize], 0);
    let expect = 1.0 / (n - 1) as f64;
    for (e, &c) in counts.iter().enumerate() {
        if e as u32 == answer {
            continue;
        }
        let freq = c as f64 / draws as f64;
        assert!((freq - expect).abs() < 0.02, "entity {e}: {freq}");
    }
}

#[test]
fn hard_negatives_skip_answer() {
    let scores = vec![0.1, 0.9, 0.5, 0.7, 0.3];
    // answer is the argmax -> ranks 2..n+1
    assert_eq!(hard_negatives(&scores, 1, 3).unwrap(), vec![3, 2, 4]);
    assert_eq!(hard_negatives(&scores, 0, 1).unwrap(), vec![1]);
    assert!(hard_negatives(&scores, 0, 5).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let scores: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let got = hard_negatives(&scores, 17, 10).unwrap();
    let mut oracle: Vec<u32> = (0..50u32).filter(|&e| e != 17).collect();
    oracle.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    assert_eq!(got, oracle[..10].to_vec());
}

#[test]
fn kge_loss_saturation_and_uniform_weights() {
    let (params, features) = setup(50, 6, 2);
    let triple = Triple::new(0, 0, 1);
    let mut pass = TriplePass::compute(&params, &features, triple, Direction::Tail, &[2, 3, 4]);
    // Saturated scores drive the loss to zero.
    pass.s_pos = 1e6;
    pass.s_neg = vec![-1e6; 3];
    let out = kge_loss(&pass, &params, 6.0, 1.0, None, 1.0, None).unwrap();
    assert!(out.loss.abs() < 1e-9);

    // alpha_adv = 0 gives uniform weights.
    let pass = TriplePass::compute(&params, &features, triple, Direction::Tail, &[2, 3, 4]);
    let out = kge_loss(&pass, &params, 6.0, 0.0, None, 1.0, None).unwrap();
    for w in &out.weights {
        assert!((w - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn kge_loss_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let (params, features) = setup(200 + seed, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let triple = Triple::new(rng.random_range(0..6), rng.random_range(0..3), rng.random_range(0..6));
        let direction = if rng.random::<bool>() { Direction::Tail } else { Direction::Head };
        let negatives = sample_negatives(6, match direction {
            Direction::Tail => triple.tail,
            Direction::Head => triple.head,
        }, 4, &mut rng);

        let pass = TriplePass::compute(&params, &features, triple, direction, &negatives);
        let base_weights = kge_loss(&pass, &params, 6.0, 1.0, None, 1.0, None).unwrap().weights;
        let mut grads = RetrieverGrads::zeros_like(&params);
        kge_loss(&pass, &params, 6.0, 1.0, Some(&base_weights), 1.0, Some(&mut grads)).unwrap();

        let point = params.pack();
        let loss_at = |v: &[f64]| {
            let mut p = params.clone();
            p.unpack_raw(v);
            let pass = TriplePass::compute(&p, &features, triple, direction, &negatives);
            kge_loss(&pass, &p, 6.0, 1.0, Some(&base_weights), 1.0, None)
                .unwrap()
                .loss
        };
        let err = grad_check(loss_at, &grads.pack(), &point, 1e-5).unwrap();
        assert!(err < 1e-5, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn rank_margin_cases() {
    // Boundary: s+ - s- == m -> inactive.
    let (loss, (dp, dn)) = rank_margin_loss(5.0, 1.0, 4.0);
    assert_eq!(loss, 0.0);
    assert_eq!((dp, dn), (0.0, 0.0));
    // Zero scores, margin 4 -> loss 4.
    let (loss, (dp, dn)) = rank_margin_loss(0.0, 0.0, 4.0);
    assert_eq!(loss, 4.0);
    assert_eq!((dp, dn), (-1.0, 1.0));
    // Far inside the margin -> zero loss, zero grads.
    let (loss, (dp, dn)) = rank_margin_loss(10.0, 0.0, 4.0);
    assert_eq!(loss, 0.0);
    assert_eq!((dp, dn), (0.0, 0.0));
}
