use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, small_config};
use super::*;
use crate::dist::{entropy, temper, Categorical};
use crate::losses::{LossSpec, TokenWeights};

fn random_seqs(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.gen_range(0..vocab)).collect())
        .collect()
}

#[test]
fn gradients_match_finite_differences_for_both_architectures() {
    for arch in [Arch::Llama, Arch::Simple] {
        let report = check_gradients(&small_config(arch, 3), 4, 1e-5).unwrap();
        for (group, err) in &report.max_rel_err {
            assert!(*err < 1e-4, "{arch:?} {group}: {err}");
        }
        assert_eq!(report.max_rel_err.len(), 5);
    }
}

#[test]
fn logits_are_causal() {
    let cfg = small_config(Arch::Llama, 1);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let ctx: Vec<usize> = (0..2).map(|_| rng.gen_range(0..5)).collect();
        let mut other = ctx.clone();
        other[1] = (other[1] + 1 + rng.gen_range(0..4)) % 5;
        let a = forward(&params, &[ctx]).unwrap();
        let b = forward(&params, &[other]).unwrap();
        assert_eq!(a.row(0, 0), b.row(0, 0));
        assert_eq!(a.row(0, 1), b.row(0, 1));
        assert_ne!(a.row(0, 2), b.row(0, 2));
    }
}

#[test]
fn batch_of_one_equals_row_of_larger_batch() {
    let cfg = ModelConfig::standard(12, 8);
    let params = ModelParams::<f32>::init(&cfg).unwrap();
    let ctx = random_seqs(37, 7, 12, 2);
    let all = forward(&params, &ctx).unwrap();
    for (b, c) in ctx.iter().enumerate().step_by(6) {
        let one = forward(&params, std::slice::from_ref(c)).unwrap();
        for p in 0..8 {
            assert_eq!(one.row(0, p), all.row(b, p));
        }
    }
}

#[test]
fn fresh_model_is_close_to_uniform() {
    let cfg = ModelConfig::standard(12, 8);
    let params = ModelParams::<f32>::init(&cfg).unwrap();
    let logits = forward(&params, &random_seqs(16, 7, 12, 4)).unwrap();
    let max_h = (12f64).ln();
    for b in 0..16 {
        for p in 0..8 {
            let z: Vec<f64> = logits.row(b, p).iter().map(|&x| x as f64).collect();
            let h = entropy(&Categorical::from_logits(&z).unwrap());
            assert!(h > 0.9 * max_h, "{h}");
        }
    }
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let cfg = small_config(Arch::Llama, 0);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    assert!(forward(&params, &[vec![5]]).is_err());
    assert!(forward(&params, &[vec![0, 1, 2]]).is_err());
    assert!(loss_and_grads(&params, &[vec![0, 1, 7]], &TokenWeights::ones(1, 3)).is_err());
}

#[test]
fn zero_weights_give_zero_gradient() {
    let cfg = small_config(Arch::Llama, 2);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let seqs = random_seqs(6, 3, 5, 1);
    let (loss, g) = loss_and_grads(&params, &seqs, &TokenWeights::zeros(6, 3)).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.data.iter().all(|&x| x == 0.0));
}

#[test]
fn gradient_is_linear_in_the_weights() {
    let cfg = small_config(Arch::Llama, 2);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let seqs = random_seqs(6, 3, 5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rand_w = || {
        TokenWeights::new((0..6).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect()).unwrap()
    };
    let (w1, w2) = (rand_w(), rand_w());
    let (_, g1) = loss_and_grads(&params, &seqs, &w1).unwrap();
    let (_, g2) = loss_and_grads(&params, &seqs, &w2).unwrap();
    let (_, g12) = loss_and_grads(&params, &seqs, &w1.add(&w2).unwrap()).unwrap();
    for ((a, b), c) in g1.data.iter().zip(&g2.data).zip(&g12.data) {
        assert!((a + b - c).abs() < 1e-9);
    }
}

#[test]
fn loss_with_unit_weights_is_mean_sequence_nll() {
    let cfg = small_config(Arch::Simple, 2);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let seqs = random_seqs(5, 3, 5, 9);
    let (loss, _) = loss_and_grads(&params, &seqs, &TokenWeights::ones(5, 3)).unwrap();
    let lp = sequence_logprobs(&params, &seqs).unwrap();
    let want = -lp.iter().flatten().sum::<f64>() / 5.0;
    assert!((loss - want).abs() < 1e-12);
}

#[test]
fn softmax_of_scaled_logits_equals_tempered_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let z: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
        for t in [0.3, 1.0, 2.5] {
            let a = temper(&Categorical::from_logits(&z).unwrap(), t).unwrap();
            let scaled: Vec<f64> = z.iter().map(|x| x / t).collect();
            let b = Categorical::from_logits(&scaled).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

fn tiny_train(loss: LossSpec, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        micro_batch: 8,
        weight_decay: 0.0,
        learning_rate: 3e-3,
        loss,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn copy_task(n: usize) -> Vec<Vec<usize>> {
    // second token repeats the first: learnable structure
    random_seqs(n, 1, 5, 6)
        .into_iter()
        .map(|s| vec![s[0], s[0], (s[0] + 1) % 5])
        .collect()
}

#[test]
fn nll_training_decreases_the_loss() {
    let cfg = small_config(Arch::Llama, 0);
    let cfg = ModelConfig { init_std: 0.02, ..cfg };
    let out = train::<f32>(&cfg, &tiny_train(LossSpec::nll(), 10), &copy_task(256)).unwrap();
    assert_eq!(out.log.len(), 10);
    assert!(out.log[9].loss < out.log[0].loss, "{:?}", out.log);
}

#[test]
fn cdiv_at_one_and_nll_share_a_trajectory() {
    let cfg = ModelConfig {
        init_std: 0.02,
        ..small_config(Arch::Llama, 0)
    };
    let data = copy_task(100);
    let a = train::<f32>(&cfg, &tiny_train(LossSpec::nll(), 3), &data).unwrap();
    let b = train::<f32>(&cfg, &tiny_train(LossSpec::cdiv(1.0), 3), &data).unwrap();
    assert_eq!(a.state.params, b.state.params);
    assert_eq!(a.state.adam, b.state.adam);
}

#[test]
fn training_is_deterministic_and_thread_count_invariant() {
    let cfg = ModelConfig::standard(12, 8);
    let train_cfg = TrainConfig {
        epochs: 1,
        batch_size: 64,
        micro_batch: 16,
        ..TrainConfig::default()
    };
    let data = random_seqs(640, 8, 12, 3);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train::<f32>(&cfg, &train_cfg, &data).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.state.adam.step, 10);
    assert_eq!(a.state.params, b.state.params);
}

#[test]
fn wrong_length_dataset_is_rejected() {
    let cfg = small_config(Arch::Llama, 0);
    let err = train::<f32>(&cfg, &tiny_train(LossSpec::nll(), 1), &[vec![1, 2]]);
    assert!(err.is_err());
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = small_config(Arch::Llama, 0);
    let out = train::<f32>(&cfg, &tiny_train(LossSpec::nll(), 0), &copy_task(10)).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.state.params, ModelParams::<f32>::init(&cfg).unwrap());
}

#[test]
fn greedy_decoding_is_deterministic() {
    let cfg = small_config(Arch::Llama, 7);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let a = generate_many(&params, &[], 5, 0.0, Decoding::Plain, 1).unwrap();
    let b = generate_many(&params, &[], 5, 0.0, Decoding::Plain, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|s| s == &a[0]));
    let logits = forward(&params, &[vec![]]).unwrap();
    let z: Vec<f64> = logits.row(0, 0).to_vec();
    assert_eq!(a[0][0], argmax(&z));
}

#[test]
fn argmax_breaks_ties_towards_the_lowest_id() {
    assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
    assert_eq!(argmax(&[3.0, 3.0]), 0);
}

#[test]
fn sampling_at_unit_temperature_matches_the_softmax() {
    let cfg = small_config(Arch::Llama, 11);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let prompt = [2usize, 4];
    let z: Vec<f64> = forward(&params, &[prompt.to_vec()]).unwrap().last(0).to_vec();
    let want = Categorical::from_logits(&z).unwrap();
    let draws = generate_many(&params, &prompt, 10_000, 1.0, Decoding::Plain, 5).unwrap();
    let mut counts = [0usize; 5];
    for s in &draws {
        counts[s[2]] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(want.probs())
        .map(|(&c, &p)| (c as f64 / 1e4 - p).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.05, "{tv}");
}

#[test]
fn top_p_of_one_is_plain_decoding() {
    let cfg = small_config(Arch::Llama, 12);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let a = generate_many(&params, &[1], 300, 1.3, Decoding::Plain, 9).unwrap();
    let b = generate_many(&params, &[1], 300, 1.3, Decoding::TopP { p: 1.0 }, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generation_is_independent_of_batching() {
    let cfg = small_config(Arch::Llama, 12);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let all = generate_many(&params, &[], 300, 1.0, Decoding::Plain, 21).unwrap();
    for i in [0usize, 129, 299] {
        let mut rng = sequence_rng(21, i);
        let z: Vec<f64> = forward(&params, &[vec![]]).unwrap().last(0).to_vec();
        let first = pick_token(&z, 1.0, Decoding::Plain, &mut rng).unwrap();
        assert_eq!(first, all[i][0]);
    }
    let one_thread = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| generate_many(&params, &[], 300, 1.0, Decoding::Plain, 21).unwrap());
    assert_eq!(all, one_thread);
}

#[test]
fn invalid_generation_requests_fail() {
    let cfg = small_config(Arch::Llama, 12);
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    assert!(generate_many(&params, &[], 3, -1.0, Decoding::Plain, 0).is_err());
    assert!(generate_many(&params, &[0, 1, 2], 3, 1.0, Decoding::Plain, 0).is_err());
    assert!(generate_many(&params, &[], 3, 1.0, Decoding::TopP { p: 0.0 }, 0).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(generate(&params, &[3], 0.5, Decoding::Plain, &mut rng).unwrap().len(), 3);
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let cfg = small_config(Arch::Llama, 0);
    let out = train::<f32>(&cfg, &tiny_train(LossSpec::tailr(0.1), 2), &copy_task(64)).unwrap();
    let ck = Checkpoint {
        params: out.state.params.clone(),
        adam: out.state.adam.clone(),
        train: Some(tiny_train(LossSpec::tailr(0.1), 2)),
        epoch: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), ck.to_bytes());
}

#[test]
fn corrupt_checkpoints_are_detected() {
    let cfg = small_config(Arch::Simple, 0);
    let params = ModelParams::<f32>::init(&cfg).unwrap();
    let ck = Checkpoint {
        adam: AdamState::new(params.len()),
        params,
        train: None,
        epoch: 0,
    };
    let mut bytes = ck.to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(crate::Error::Corrupt(_))));
    assert!(matches!(Checkpoint::<f32>::from_bytes(b"garbage"), Err(crate::Error::Corrupt(_))));
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&ck.to_bytes()),
        Err(crate::Error::Corrupt(_))
    ));
}

