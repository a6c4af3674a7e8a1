use super::*;
use crate::numkernel::{grad_check_multi, softmax};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn schedule_boundary_and_midpoint() {
    let s = NoiseSchedule::new(100, 0.3).unwrap();
    assert_eq!(s.probs(100).unwrap(), (0.0, 1.0, 0.0));
    let (keep, mask, rep) = s.probs(50).unwrap();
    assert!((keep - 0.5).abs() < 1e-12);
    assert!((rep - 0.3 * 0.5 * 0.5).abs() < 1e-12);
    assert!((mask - (1.0 - 0.5 - 0.075)).abs() < 1e-12);
    assert!(s.probs(0).is_err());
    assert!(s.probs(101).is_err());
}

#[test]
fn schedule_simplex_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t_max = rng.random_range(1..200);
        let rho0 = rng.random_range(0.0..1.0);
        let s = NoiseSchedule::new(t_max, rho0).unwrap();
        let t = rng.random_range(1..=t_max);
        let (keep, mask, rep) = s.probs(t).unwrap();
        for v in [keep, mask, rep] {
            assert!((0.0..=1.0).contains(&v), "{v} at t={t}/{t_max}");
        }
        assert!((keep + mask + rep - 1.0).abs() < 1e-12);
    }
}

#[test]
fn schedule_keep_non_increasing() {
    let s = NoiseSchedule::new(64, 0.3).unwrap();
    let mut prev = f64::INFINITY;
    for t in 1..=64 {
        let (keep, _, _) = s.probs(t).unwrap();
        assert!(keep <= prev + 1e-15);
        prev = keep;
    }
}

#[test]
fn corrupt_channels_and_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // rho0 = 0 never replaces.
    let s = NoiseSchedule::new(10, 0.0).unwrap();
    for _ in 0..500 {
        let t = rng.random_range(1..=10);
        let c = corrupt(&s, 3, t, 8, &mut rng).unwrap();
        assert_ne!(c.channel, Channel::Replaced);
        match c.channel {
            Channel::Kept => assert_eq!(c.xt, 3),
            Channel::Masked => assert_eq!(c.xt, 8),
            Channel::Replaced => unreachable!(),
        }
    }
    // t = T always masks.
    let s = NoiseSchedule::new(10, 0.3).unwrap();
    for _ in 0..200 {
        let c = corrupt(&s, 0, 10, 8, &mut rng).unwrap();
        assert_eq!(c.channel, Channel::Masked);
        assert_eq!(c.xt, 8);
    }
    // Replacement needs a candidate.
    assert!(corrupt(&s, 0, 5, 1, &mut rng).is_err());
    let s0 = NoiseSchedule::new(10, 0.0).unwrap();
    assert!(corrupt(&s0, 0, 5, 1, &mut rng).is_ok());
}

#[test]
fn corrupt_marginals_match_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = NoiseSchedule::new(100, 0.3).unwrap();
    let n_entities = 10usize;
    let x0 = 4u32;
    let draws = 100_000usize;
    for t in [1u32, 25, 50, 75, 100] {
        let (keep, mask, rep) = s.probs(t).unwrap();
        let mut counts = [0usize; 3];
        let mut replaced = vec![0usize; n_entities];
        for _ in 0..draws {
            let c = corrupt(&s, x0, t, n_entities, &mut rng).unwrap();
            match c.channel {
                Channel::Kept => counts[0] += 1,
                Channel::Masked => counts[1] += 1,
                Channel::Replaced => {
                    counts[2] += 1;
                    replaced[c.xt as usize] += 1;
                }
            }
        }
        let freq = |c: usize| c as f64 / draws as f64;
        assert!((freq(counts[0]) - keep).abs() < 0.01, "keep at t={t}");
        assert!((freq(counts[1]) - mask).abs() < 0.01, "mask at t={t}");
        assert!((freq(counts[2]) - rep).abs() < 0.01, "rep at t={t}");
        if rep > 0.05 {
            // Replaced ids uniform over E \ {x0}.
            let expect = freq(counts[2]) / (n_entities - 1) as f64;
            for (e, &c) in replaced.iter().enumerate() {
                if e as u32 == x0 {
                    assert_eq!(c, 0);
                } else {
                    assert!((freq(c) - expect).abs() < 0.02, "entity {e} at t={t}");
                }
            }
        }
    }
}

#[test]
fn timestep_embedding_basics() {
    let e = timestep_embedding(0, 8).unwrap();
    for (i, v) in e.iter().enumerate() {
        if i % 2 == 0 {
            assert_eq!(*v, 0.0); // sin(0)
        } else {
            assert_eq!(*v, 1.0); // cos(0)
        }
    }
    assert!(timestep_embedding(5, 7).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let t = rng.random_range(0..10_000);
        let e = timestep_embedding(t, 16).unwrap();
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn timestep_embedding_hand_evaluation() {
    // d_time = 4: frequencies 1 and 1e-4.
    let e = timestep_embedding(5, 4).unwrap();
    assert!((e[0] - 5f64.sin()).abs() < 1e-15);
    assert!((e[1] - 5f64.cos()).abs() < 1e-15);
    assert!((e[2] - (5e-4f64).sin()).abs() < 1e-15);
    assert!((e[3] - (5e-4f64).cos()).abs() < 1e-15);
}

fn tiny_denoiser(seed: u64, n_entities: usize, ctx_width: usize) -> DenoiserParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenoiserParams::init(n_entities, ctx_width, ctx_width, 8, 4, 16, &mut rng).unwrap()
}

fn random_ctx(seed: u64, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rel: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
    (ctx, rel)
}

#[test]
fn assemble_layout_and_mask_row() {
    let den = tiny_denoiser(5, 6, 4);
    let (ctx, rel) = random_ctx(6, 4);
    let input = assemble_input(&den, &ctx, &rel, den.mask_id(), 3, Direction::Tail).unwrap();
    assert_eq!(input.len(), 4 + 4 + 4 + 8 + 4);
    // Token slice equals the MASK row (row |E|).
    assert_eq!(&input[8..12], den.token_table.row(6));

    // Two inputs differing only in direction differ exactly in the last
    // d_dir slice.
    let a = assemble_input(&den, &ctx, &rel, 2, 3, Direction::Tail).unwrap();
    let b = assemble_input(&den, &ctx, &rel, 2, 3, Direction::Head).unwrap();
    let d_dir = den.d_dir();
    let cut = a.len() - d_dir;
    assert_eq!(a[..cut], b[..cut]);
    assert_ne!(a[cut..], b[cut..]);
}

#[test]
fn logits_shape_softmax_and_determinism() {
    let den = tiny_denoiser(7, 6, 4);
    let (ctx, rel) = random_ctx(8, 4);
    let input = assemble_input(&den, &ctx, &rel, 1, 2, Direction::Head).unwrap();
    let logits = denoise_logits(&den, &input).unwrap();
    assert_eq!(logits.len(), 6);
    let p = softmax(&logits);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    // Pure function: identical inputs give bit-identical outputs.
    assert_eq!(logits, denoise_logits(&den, &input).unwrap());
}

#[test]
fn direction_embedding_changes_logits() {
    let den = tiny_denoiser(9, 6, 4);
    let (ctx, rel) = random_ctx(10, 4);
    let a = denoise_logits(
        &den,
        &assemble_input(&den, &ctx, &rel, 2, 3, Direction::Tail).unwrap(),
    )
    .unwrap();
    let b = denoise_logits(
        &den,
        &assemble_input(&den, &ctx, &rel, 2, 3, Direction::Head).unwrap(),
    )
    .unwrap();
    assert_ne!(a, b);
}

struct FixedProvider {
    ctx: Vec<f64>,
    rel: Vec<f64>,
}

impl ContextProvider for FixedProvider {
    fn context(&self, _e: u32, _r: u32) -> (Vec<f64>, Vec<f64>) {
        (self.ctx.clone(), self.rel.clone())
    }
}

#[test]
fn diffusion_loss_combines_and_tail_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let den = tiny_denoiser(11, 5, 4);
    let schedule = NoiseSchedule::new(10, 0.3).unwrap();
    let triples: Vec<Triple> = (0..4)
        .map(|_| {
            Triple::new(
                rng.random_range(0..5),
                0,
                rng.random_range(0..5),
            )
        })
        .collect();
    let (ctx, rel) = random_ctx(12, 4);
    let provider = FixedProvider { ctx, rel };

    let plans = plan_corruptions(&schedule, &triples, 5, false, &mut rng).unwrap();
    let out = diffusion_loss(&den, &plans, &provider, 2.0, None).unwrap();
    assert!((out.combined - (out.tail_ce + 2.0 * out.head_ce)).abs() < 1e-12);

    let plans_tail = plan_corruptions(&schedule, &triples, 5, true, &mut rng).unwrap();
    let out_tail = diffusion_loss(&den, &plans_tail, &provider, 2.0, None).unwrap();
    assert_eq!(out_tail.combined, out_tail.tail_ce);
    assert_eq!(out_tail.head_ce, 0.0);

    // One shared timestep per triple.
    for p in &plans {
        assert_eq!(p.tail_sample.t, p.t);
        assert_eq!(p.head_sample.unwrap().t, p.t);
    }
}

#[test]
fn diffusion_loss_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let n_entities = 5usize;
        let den = tiny_denoiser(800 + seed, n_entities, 4);
        let schedule = NoiseSchedule::new(6, 0.3).unwrap();
        let triples = vec![Triple::new(
            rng.random_range(0..5),
            0,
            rng.random_range(0..5),
        )];
        let (ctx, rel) = random_ctx(900 + seed, 4);
        let provider = FixedProvider { ctx, rel };
        let plans = plan_corruptions(&schedule, &triples, n_entities, false, &mut rng).unwrap();

        let mut grads = DenoiserGrads::zeros_like(&den);
        diffusion_loss(&den, &plans, &provider, 2.0, Some(&mut grads)).unwrap();

        let point = den.pack();
        let loss_at = |v: &[f64]| {
            let mut d = den.clone();
            d.unpack_raw(v);
            diffusion_loss(&d, &plans, &provider, 2.0, None).unwrap().combined
        };
        let err = grad_check_multi(loss_at, &grads.pack(), &point, &[1e-5, 1e-4, 1e-3]).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
