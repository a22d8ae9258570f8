use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::catalog::Surface;
use crate::dataset::HistoryItem;

fn tiny_tokens(k: usize, m: usize) -> TokenSpace {
    TokenSpace::new(k, m, vec!["en".into(), "sv".into()], 3).unwrap()
}

fn tiny_params(seed: u64) -> ScorerParams {
    let cfg = ScorerConfig {
        d_model: 8,
        hidden: 6,
        embedding_scale: 0.5,
        seed,
        ..ScorerConfig::default()
    };
    ScorerParams::init(tiny_tokens(4, 2), 3, &cfg).unwrap()
}

fn random_example(rng: &mut ChaCha8Rng, k: u32, m: usize, d_u: usize) -> TrainingExample {
    let n_hist = rng.random_range(0..4);
    TrainingExample {
        user_id: format!("u{}", rng.random_range(0..5)),
        history: (0..n_hist)
            .map(|i| HistoryItem {
                sid: SemanticId((0..m).map(|_| rng.random_range(0..k)).collect()),
                timestamp: i,
            })
            .collect(),
        user_vector: (0..d_u).map(|_| rng.random_range(-1.0..1.0)).collect(),
        locale: if rng.random::<bool>() { "en".into() } else { "sv".into() },
        affinity_topics: vec![rng.random_range(0..3)],
        control: if rng.random::<bool>() {
            ControlToken::Familiar
        } else {
            ControlToken::Unfamiliar
        },
        target: SemanticId((0..m).map(|_| rng.random_range(0..k)).collect()),
        target_episode: format!("e{}", rng.random_range(0..1000)),
        timestamp: rng.random_range(0..1_000_000),
        sample_weight: rng.random_range(0.5..2.0),
        surface: Surface::Home,
    }
}

fn batch(seed: u64, n: usize) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_example(&mut rng, 4, 2, 3)).collect()
}

#[test]
fn zero_parameters_give_uniform_logits() {
    let p = ScorerParams::zeros(tiny_params(0).shape().clone()).unwrap();
    let ex = &batch(1, 1)[0];
    let ctx = PromptContext::from_example(p.tokens(), ex);
    for prefix in [vec![], vec![2]] {
        let logits = p.level_logits(&ctx, &prefix).unwrap();
        assert!(logits.iter().all(|&l| l == logits[0]));
    }
}

#[test]
fn uniform_loss_is_levels_times_log_k() {
    let tokens = TokenSpace::new(16, 3, vec!["en".into()], 2).unwrap();
    let shape = ScorerShape {
        tokens,
        d_model: 4,
        hidden: 4,
        d_u: 2,
        history_decay: None,
    };
    let p = ScorerParams::zeros(shape).unwrap();
    let mut ex = batch(2, 1).remove(0);
    ex.user_vector = vec![0.3, -0.2];
    ex.history.clear();
    ex.target = SemanticId(vec![3, 15, 0]);
    ex.sample_weight = 1.5;
    let loss = p.example_loss(&ex).unwrap();
    assert!((loss - 1.5 * 3.0 * 16f64.ln()).abs() < 1e-12);
}

#[test]
fn weight_scales_loss() {
    let p = tiny_params(3);
    let mut ex = batch(4, 1).remove(0);
    ex.sample_weight = 1.0;
    let one = p.example_loss(&ex).unwrap();
    ex.sample_weight = 2.0;
    assert_eq!(p.example_loss(&ex).unwrap(), 2.0 * one);
}

#[test]
fn forward_is_deterministic() {
    let p = tiny_params(5);
    let ex = &batch(6, 1)[0];
    let ctx = PromptContext::from_example(p.tokens(), ex);
    let a = p.level_logits(&ctx, &[1]).unwrap();
    let b = p.level_logits(&ctx, &[1]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mean_pooling_ignores_history_order() {
    let p = tiny_params(7);
    let mut ex = batch(8, 1).remove(0);
    ex.history = (0..4)
        .map(|i| HistoryItem {
            sid: SemanticId(vec![i, 3 - i]),
            timestamp: i as i64,
        })
        .collect();
    let ctx = PromptContext::from_example(p.tokens(), &ex);
    let mut rev = ctx.clone();
    rev.history.reverse();
    let a = p.level_logits(&ctx, &[]).unwrap();
    let b = p.level_logits(&rev, &[]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn level_probabilities_sum_to_one() {
    let p = tiny_params(9);
    for ex in batch(10, 5) {
        let ctx = PromptContext::from_example(p.tokens(), &ex);
        for prefix in [vec![], vec![ex.target.codes()[0]]] {
            let s: f64 = crate::util::softmax(&p.level_logits(&ctx, &prefix).unwrap()).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn prefix_and_target_validation() {
    let p = tiny_params(11);
    let mut ex = batch(12, 1).remove(0);
    let ctx = PromptContext::from_example(p.tokens(), &ex);
    assert!(matches!(p.level_logits(&ctx, &[0, 1]), Err(Error::PrefixTooLong { .. })));
    assert!(matches!(p.level_logits(&ctx, &[9]), Err(Error::CodeOutOfRange { .. })));
    ex.target = SemanticId(vec![0, 4]);
    assert!(matches!(p.example_loss(&ex), Err(Error::CodeOutOfRange { .. })));
    ex.target = SemanticId(vec![0, 1]);
    ex.user_vector.push(0.0);
    assert!(matches!(p.example_loss(&ex), Err(Error::DimensionMismatch { .. })));
}

/// Central finite differences of the mean loss, computed from the forward
/// pass only.
fn finite_difference(p: &ScorerParams, examples: &[TrainingExample], step: f64) -> Vec<f64> {
    let mut probe = p.clone();
    (0..p.len())
        .map(|i| {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + step;
            let up = probe.mean_loss(examples).unwrap();
            probe.values_mut()[i] = orig - step;
            let down = probe.mean_loss(examples).unwrap();
            probe.values_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences_on_every_block() {
    for decay in [None, Some(0.7)] {
        let mut p = tiny_params(13);
        p.shape.history_decay = decay;
        // biases start at zero; perturb so every block is exercised away from zero
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for v in p.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let examples = batch(15, 6);
        let (_, analytic) = p.grad(&examples).unwrap();
        let numeric = finite_difference(&p, &examples, 1e-4);
        for block in p.blocks() {
            let mut worst: f64 = 0.0;
            for i in block.range() {
                let (a, n) = (analytic[i], numeric[i]);
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst <= 1e-4, "{}: relative error {worst:e}", block.name);
        }
    }
}

#[test]
fn unused_tokens_receive_zero_gradient() {
    let p = tiny_params(16);
    let mut examples = batch(17, 4);
    for ex in examples.iter_mut() {
        ex.history.clear();
        ex.target = SemanticId(vec![1, 2]);
        ex.locale = "en".into();
        ex.affinity_topics = vec![0];
        ex.control = ControlToken::Familiar;
    }
    let (_, g) = p.grad(&examples).unwrap();
    let ts = p.tokens().clone();
    let dead = [
        TokenSpace::BOS,
        TokenSpace::EOS,
        TokenSpace::PLACEHOLDER,
        TokenSpace::UNFAMILIAR,
        ts.sid_token(0, 0),
        ts.sid_token(0, 3),
        ts.sid_token(1, 0),
        ts.sid_token(1, 1),
        ts.locale_token("sv").unwrap(),
        ts.topic_token(2).unwrap(),
    ];
    for t in dead {
        assert!(g[p.embedding_range(t)].iter().all(|&v| v == 0.0), "token {t}");
    }
    // level-1 target token sits on the level-2 head's prefix path
    assert!(g[p.embedding_range(ts.sid_token(0, 1))].iter().any(|&v| v != 0.0));
}

#[test]
fn doubling_weights_doubles_gradient() {
    let p = tiny_params(18);
    let examples = batch(19, 5);
    let doubled: Vec<_> = examples
        .iter()
        .cloned()
        .map(|mut e| {
            e.sample_weight *= 2.0;
            e
        })
        .collect();
    let (l1, g1) = p.grad(&examples).unwrap();
    let (l2, g2) = p.grad(&doubled).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let p = tiny_params(20);
    let bytes = p.to_bytes().unwrap();
    let back = ScorerParams::parse(&bytes).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.to_bytes().unwrap(), bytes);
}

#[test]
fn checkpoint_rejects_wrong_block_shape() {
    let p = tiny_params(21);
    let text = String::from_utf8(p.to_bytes().unwrap()).unwrap();
    let broken = text.replacen("\"proj_b1\",\"rows\":1", "\"proj_b1\",\"rows\":2", 1);
    assert!(ScorerParams::parse(broken.as_bytes()).is_err());
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let p = tiny_params(22);
    let examples = batch(23, 100);
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        steps: 200,
        batch_size: 100,
        seed: 1,
    };
    let (a, log) = train(p.clone(), &examples, &cfg).unwrap();
    let (head, tail) = log.head_tail_means(20);
    assert!(tail < head, "smoothed loss {head} -> {tail}");
    assert!(a.mean_loss(&examples).unwrap() < p.mean_loss(&examples).unwrap());

    let (b, _) = train(p.clone(), &examples, &cfg).unwrap();
    assert_eq!(a, b);
    let mut shuffled = examples.clone();
    shuffled.reverse();
    shuffled.swap(3, 40);
    let (c, _) = train(p, &shuffled, &cfg).unwrap();
    assert_eq!(a, c);
}

#[test]
fn non_finite_loss_aborts_training() {
    let mut p = tiny_params(24);
    let block = p.blocks().into_iter().find(|b| b.name == "head1_b2").unwrap();
    p.values_mut()[block.range()][0] = f64::INFINITY;
    let err = train(p, &batch(25, 8), &TrainConfig { steps: 3, ..TrainConfig::default() });
    assert!(matches!(err, Err(Error::NonFiniteLoss { .. })));
}

fn tiny_catalog() -> (Vec<crate::catalog::Episode>, crate::quantizer::Codebook) {
    let cfg = crate::catalog::SynthConfig {
        n_shows: 10,
        episodes_per_show: 4,
        n_users: 2,
        n_topics: 3,
        d: 6,
        d_u: 3,
        ..Default::default()
    };
    let cat = crate::catalog::generate_catalog(&cfg).unwrap();
    let xs: Vec<Vec<f64>> = cat.episodes.iter().map(|e| e.content_embedding.clone()).collect();
    let cb = crate::quantizer::fit(&xs, 4, 2, 0, 20).unwrap();
    (cat.episodes, cb)
}

#[test]
fn grounding_stages_freeze_the_other_side() {
    let (eps, cb) = tiny_catalog();
    let p = tiny_params(26);
    let cfg = GroundConfig {
        embed_steps: 20,
        head_steps: 20,
        batch_size: 8,
        ..GroundConfig::default()
    };
    let (a, log) = ground(p.clone(), &eps, &cb, &cfg, GroundStage::Embeddings).unwrap();
    assert_eq!(log.embed_losses.len(), 20);
    for r in p.head_ranges().into_iter().chain([p.projection_range()]) {
        assert_eq!(a.values()[r.clone()], p.values()[r]);
    }
    assert_ne!(a.values()[p.sid_embedding_range()], p.values()[p.sid_embedding_range()]);

    let (b, log) = ground(p.clone(), &eps, &cb, &cfg, GroundStage::Heads).unwrap();
    assert_eq!(log.head_losses.len(), 20);
    let emb = p.embedding_range(0).start..p.blocks()[0].range().end;
    assert_eq!(b.values()[emb.clone()], p.values()[emb]);
    for r in p.head_ranges() {
        assert_ne!(b.values()[r.clone()], p.values()[r]);
    }
}

#[test]
fn grounding_requires_steps_and_matching_codebook() {
    let (eps, cb) = tiny_catalog();
    let p = tiny_params(27);
    let zero = GroundConfig {
        embed_steps: 0,
        head_steps: 0,
        ..GroundConfig::default()
    };
    assert!(ground(p.clone(), &eps, &cb, &zero, GroundStage::Both).is_err());
    let heads_only = GroundConfig {
        head_steps: 0,
        ..GroundConfig::default()
    };
    assert!(ground(p.clone(), &eps, &cb, &heads_only, GroundStage::Heads).is_err());
    let xs: Vec<Vec<f64>> = eps.iter().map(|e| e.content_embedding.clone()).collect();
    let other = crate::quantizer::fit(&xs, 5, 2, 0, 20).unwrap();
    assert!(matches!(
        ground(p, &eps, &other, &GroundConfig::default(), GroundStage::Both),
        Err(Error::Incompatible(_))
    ));
}
