use super::*;
use crate::kgdata::{synth_kg, SynthSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture() -> (KnowledgeGraph, ModalityFeatureStore) {
    synth_kg(SynthSpec {
        seed: 5,
        n_entities: 24,
        n_relations: 3,
        n_triples: 90,
        feature_dim: 4,
        feature_noise: 0.2,
    })
    .unwrap()
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.d = 3;
    cfg.batch_size = 32;
    cfg.n_negatives = 4;
    cfg.lr_kge = 1e-2;
    cfg.lr_denoiser = 1e-2;
    cfg.t_steps = 8;
    cfg.pool_size = 6;
    cfg.shortlist_k = 8;
    cfg.freeze_epoch = 3;
    cfg.ema_decay = 0.9;
    cfg.epochs = 5;
    cfg.eval_every = 1;
    cfg.seed = 11;
    cfg.d_time = 8;
    cfg.d_dir = 4;
    cfg.denoiser_hidden = 16;
    cfg
}

#[test]
fn candidate_pool_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
    // pool_size 2, hard_fraction 1: answer plus the best wrong entity.
    let pool = build_candidate_pool(&scores, 7, 2, 1.0, &mut rng).unwrap();
    let best_wrong = crate::retriever::hard_negatives(&scores, 7, 1).unwrap()[0];
    assert_eq!(pool.ids, vec![7, best_wrong]);

    // hard_fraction 0: all negatives are random draws.
    let pool = build_candidate_pool(&scores, 7, 10, 0.0, &mut rng).unwrap();
    assert_eq!(pool.ids[0], 7);
    assert_eq!(pool.ids.len(), 10);

    // 64 candidates over |E| = 100 at hard_fraction 0.5: 1 answer, 32 hard,
    // 31 random, all distinct; teacher scores aligned.
    let pool = build_candidate_pool(&scores, 7, 64, 0.5, &mut rng).unwrap();
    assert_eq!(pool.ids.len(), 64);
    let mut uniq = pool.ids.clone();
    uniq.sort_unstable();
    uniq.dedup();
    assert_eq!(uniq.len(), 64, "pool ids must be distinct");
    let hard = crate::retriever::hard_negatives(&scores, 7, 32).unwrap();
    assert_eq!(&pool.ids[1..33], hard.as_slice());
    for (&e, &s) in pool.ids.iter().zip(&pool.teacher_scores) {
        assert_eq!(s, scores[e as usize]);
    }

    assert!(build_candidate_pool(&scores, 7, 101, 0.5, &mut rng).is_err());
}

#[test]
fn distill_loss_zero_at_match_and_gated_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pool = build_candidate_pool(&scores, 3, 6, 0.5, &mut rng).unwrap();

    // Student logits equal to teacher scores on the pool -> zero loss.
    let mut student = vec![0.0f64; 20];
    for (&e, &s) in pool.ids.iter().zip(&pool.teacher_scores) {
        student[e as usize] = s;
    }
    let (loss, grad) = distill_loss(&pool, &student, 0.7).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g.abs() < 1e-12));

    // Off-pool gradient entries are identically zero.
    let student: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, grad) = distill_loss(&pool, &student, 0.7).unwrap();
    for e in 0..20u32 {
        if !pool.ids.contains(&e) {
            assert_eq!(grad[e as usize], 0.0);
        }
    }
}

#[test]
fn distill_gradient_matches_finite_differences() {
    use crate::numkernel::grad_check;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let scores: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pool = build_candidate_pool(&scores, 5, 8, 0.5, &mut rng).unwrap();
        let student: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grad) = distill_loss(&pool, &student, 0.7).unwrap();
        let err = grad_check(
            |v| distill_loss(&pool, v, 0.7).unwrap().0,
            &grad,
            &student,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn zero_weights_still_report_terms() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.lambda_distill = 0.0;
    cfg.lambda_rank = 0.0;
    let mut state = TrainState::new(&kg, &features, cfg).unwrap();
    state.epoch = 1;
    let b = joint_step(&mut state, &features, &kg.train[..16], 0).unwrap();
    assert!(b.distill > 0.0, "distill term still computed");
    assert!(b.rank >= 0.0);
    assert!((b.total - (b.kge + b.diff)).abs() < 1e-12);
}

#[test]
fn loss_breakdown_identity() {
    let (kg, features) = fixture();
    let cfg = tiny_config();
    let mut state = TrainState::new(&kg, &features, cfg.clone()).unwrap();
    state.epoch = 1;
    let b = joint_step(&mut state, &features, &kg.train[..16], 0).unwrap();
    let expect = b.kge + b.diff + cfg.lambda_distill * b.distill + cfg.lambda_rank * b.rank;
    assert!((b.total - expect).abs() <= 1e-9 * expect.abs().max(1.0));
}

#[test]
fn freeze_stops_retriever_updates() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.freeze_epoch = 2;
    let mut state = TrainState::new(&kg, &features, cfg).unwrap();

    state.epoch = 1;
    let before = state.retriever_hash();
    joint_step(&mut state, &features, &kg.train[..16], 0).unwrap();
    assert_ne!(state.retriever_hash(), before, "unfrozen epoch must update");

    state.epoch = 3; // past freeze_epoch = 2
    let frozen = state.retriever_hash();
    for step in 0..3 {
        joint_step(&mut state, &features, &kg.train[..16], step * 16).unwrap();
        assert_eq!(state.retriever_hash(), frozen, "frozen epoch must not update");
    }
}

#[test]
fn post_freeze_teacher_scores_bit_identical() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.freeze_epoch = 1;
    let mut state = TrainState::new(&kg, &features, cfg).unwrap();
    let q = crate::kgdata::Query::from_triple(kg.train[0], Direction::Tail);

    state.epoch = 2;
    joint_step(&mut state, &features, &kg.train[..16], 0).unwrap();
    let fused = fuse_all(&state.retriever, q.relation, &features);
    let teacher1 = score_all_cached(&state.retriever, &fused, &q);

    state.epoch = 3;
    joint_step(&mut state, &features, &kg.train[..16], 0).unwrap();
    let fused = fuse_all(&state.retriever, q.relation, &features);
    let teacher2 = score_all_cached(&state.retriever, &fused, &q);
    assert_eq!(teacher1, teacher2);
}

#[test]
fn overfit_one_batch_reduces_loss() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.freeze_epoch = 100;
    cfg.epochs = 100;
    let mut state = TrainState::new(&kg, &features, cfg).unwrap();
    state.epoch = 1;
    let batch = &kg.train[..16];
    let first = joint_step(&mut state, &features, batch, 0).unwrap();
    let mut last = first;
    for _ in 0..49 {
        last = joint_step(&mut state, &features, batch, 0).unwrap();
    }
    assert!(
        last.total < first.total,
        "no progress: first {} last {}",
        first.total,
        last.total
    );
}

#[test]
fn multi_worker_first_step_matches_single_worker() {
    let (kg, features) = fixture();
    let cfg = tiny_config();
    let mut single = TrainState::new(&kg, &features, cfg.clone()).unwrap();
    single.epoch = 1;
    let a = joint_step(&mut single, &features, &kg.train[..20], 0).unwrap();

    let mut cfg4 = cfg;
    cfg4.threads = 4;
    let mut multi = TrainState::new(&kg, &features, cfg4).unwrap();
    multi.epoch = 1;
    let b = joint_step(&mut multi, &features, &kg.train[..20], 0).unwrap();

    for (x, y) in [
        (a.kge, b.kge),
        (a.diff, b.diff),
        (a.distill, b.distill),
        (a.rank, b.rank),
        (a.total, b.total),
    ] {
        let rel = (x - y).abs() / x.abs().max(1e-12);
        assert!(rel < 1e-4, "{x} vs {y}");
    }
}

#[test]
fn epochs_zero_returns_initialization() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.epochs = 0;
    let out = train(&kg, &features, cfg.clone(), |_| {}).unwrap();
    assert_eq!(out.best.epoch, 0);
    assert!(out.log.is_empty());
    let fresh = TrainState::new(&kg, &features, cfg).unwrap();
    assert_eq!(
        content_hash(out.best.retriever.tensors()),
        content_hash(fresh.retriever.tensors())
    );
}

#[test]
fn identical_seeds_identical_trajectories() {
    let (kg, features) = fixture();
    let cfg = tiny_config();
    let a = train(&kg, &features, cfg.clone(), |_| {}).unwrap();
    let b = train(&kg, &features, cfg, |_| {}).unwrap();
    assert_eq!(a.log, b.log);
}

#[test]
fn training_improves_validation_mrr() {
    // A 24-entity toy is too noisy a validation target; use the 100-entity
    // generator shape for this check.
    let (kg, features) = synth_kg(SynthSpec {
        seed: 1,
        n_entities: 100,
        n_relations: 10,
        n_triples: 1000,
        feature_dim: 8,
        feature_noise: 0.2,
    })
    .unwrap();
    let mut cfg = tiny_config();
    cfg.d = 4;
    cfg.batch_size = 400;
    cfg.n_negatives = 8;
    cfg.pool_size = 16;
    cfg.shortlist_k = 16;
    cfg.ema_decay = 0.9;
    cfg.epochs = 120;
    cfg.eval_every = 120;
    cfg.freeze_epoch = 80;
    cfg.lr_kge = 5e-3;
    cfg.lr_denoiser = 5e-3;
    let out = train(&kg, &features, cfg, |_| {}).unwrap();
    let first = out.log.first().unwrap();
    let last = out.log.last().unwrap();
    assert_eq!(first.epoch, 0);
    assert!(
        last.val_mrr > first.val_mrr,
        "no improvement: {} -> {}",
        first.val_mrr,
        last.val_mrr
    );
    // Best checkpoint tracks the max of the trajectory.
    let best_mrr = out.log.iter().map(|r| r.val_mrr).fold(f64::MIN, f64::max);
    let recorded = out.best.val_history.last().unwrap().mrr;
    assert_eq!(recorded, best_mrr);
}

#[test]
fn ema_tracks_live_weights() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.ema_decay = 0.5;
    cfg.epochs = 10;
    let mut state = TrainState::new(&kg, &features, cfg).unwrap();
    let gap = |s: &TrainState| -> f64 {
        s.ema
            .pack()
            .iter()
            .zip(s.denoiser.pack())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    assert_eq!(gap(&state), 0.0, "shadow starts at live weights");
    for e in 1..=10 {
        state.epoch = e;
        joint_step(&mut state, &features, &kg.train[..16], 0).unwrap();
    }
    assert!(gap(&state) > 0.0, "shadow lags during training");
}

#[test]
fn checkpoint_roundtrip_bitexact() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.epochs = 2;
    cfg.freeze_epoch = 1;
    let out = train(&kg, &features, cfg, |_| {}).unwrap();
    let dir = std::env::temp_dir().join("radd_trainer_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let p1 = dir.join("a.ckpt");
    let p2 = dir.join("b.ckpt");
    save_checkpoint(&out.last, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.epoch, out.last.epoch);
    assert_eq!(loaded.config, out.last.config);
    assert_eq!(loaded.val_history.len(), out.last.val_history.len());
}

#[test]
fn checkpoint_shape_tampering_detected() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    cfg.freeze_epoch = 1;
    let out = train(&kg, &features, cfg, |_| {}).unwrap();
    let dir = std::env::temp_dir().join("radd_trainer_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tamper.ckpt");
    save_checkpoint(&out.last, &path).unwrap();

    // Editing the embedding dimension in the config segment makes every
    // tensor shape check fail.
    let bytes = std::fs::read(&path).unwrap();
    let needle = b"d=3\n";
    let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut edited = bytes.clone();
    edited[pos + 2] = b'4';
    std::fs::write(&path, &edited).unwrap();
    match load_checkpoint(&path) {
        Err(RaddError::Checkpoint { reason, .. }) => {
            assert!(reason.contains("shape"), "{reason}")
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }

    // Truncation is detected.
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn resume_with_zero_epochs_reproduces_metrics() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.epochs = 3;
    cfg.eval_every = 1;
    let out = train(&kg, &features, cfg, |_| {}).unwrap();
    let dir = std::env::temp_dir().join("radd_trainer_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("resume.ckpt");
    save_checkpoint(&out.best, &path).unwrap();

    // The metrics recorded at save time are reproduced after load.
    let loaded = load_checkpoint(&path).unwrap();
    let recorded = *loaded.val_history.last().unwrap();
    let state = TrainState::from_checkpoint(loaded, &kg).unwrap();
    let report = state.validate(&kg, &features).unwrap();
    assert_eq!(report.overall.mrr, recorded.mrr);
    assert_eq!(report.overall.h1, recorded.h1);
    assert_eq!(report.overall.h10, recorded.h10);
}

#[test]
fn structure_only_keeps_gate_pinned() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.structure_only = true;
    cfg.epochs = 2;
    cfg.freeze_epoch = 2;
    let out = train(&kg, &features, cfg, |_| {}).unwrap();
    assert!(out.best.retriever.structure_only);
    for r in 0..kg.n_relations() as u32 {
        assert_eq!(out.best.retriever.gate(r), [1.0, 0.0, 0.0]);
    }
}

#[test]
fn inverse_augmentation_doubles_relation_table() {
    let (kg, features) = fixture();
    let mut cfg = tiny_config();
    cfg.augment_inverse_relations = true;
    cfg.epochs = 1;
    cfg.freeze_epoch = 1;
    let out = train(&kg, &features, cfg, |_| {}).unwrap();
    assert_eq!(out.last.retriever.n_relations(), 2 * kg.n_relations());
}
