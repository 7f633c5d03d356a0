use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use prtrade::losses::LossSpec;
use prtrade::multask::{self, TaskConfig, SEQ_LEN, VOCAB};
use prtrade::nn::{self, AdamHyper, Decoding, ModelConfig, ModelParams, TrainConfig, TrainState};
use prtrade::{artcase, prmetrics, ArtCaseParams, LogitTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pr_enumeration(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("pr_curve_exact");
    for (v, l) in [(6, 3), (8, 4), (10, 5)] {
        let p = LogitTable::random(v, l, 2.0, &mut rng).to_dist(1.0).unwrap();
        let q = LogitTable::random(v, l, 2.0, &mut rng).to_dist(1.0).unwrap();
        let lambdas = [0.1, 1.0, 10.0];
        group.bench_with_input(BenchmarkId::from_parameter(format!("V{v}_L{l}")), &(p, q), |b, (p, q)| {
            b.iter(|| prmetrics::pr_curve_exact(p, q, black_box(&lambdas)).unwrap())
        });
    }
    group.finish();
}

fn artcase_closed_form(c: &mut Criterion) {
    let params = ArtCaseParams { vocab_size: 100, k: 20, len: 3, l1: 1, l2: 2, rho: 0.5, a: 0.725, epsilon: 0.15 };
    c.bench_function("artcase_closed_form_100_lambdas", |b| {
        b.iter(|| {
            (0..100)
                .map(|i| artcase::pr_closed_form(&params, black_box(1.5), 10f64.powf(i as f64 / 25.0 - 2.0)).unwrap().beta)
                .sum::<f64>()
        })
    });
}

fn training_step(c: &mut Criterion) {
    let model = ModelConfig::standard(VOCAB, SEQ_LEN);
    let data = TaskConfig { dataset_size: 512, ..TaskConfig::default() }.token_dataset().unwrap();
    let mut group = c.benchmark_group("train_step_batch512");
    group.sample_size(10);
    for loss in [LossSpec::nll(), LossSpec::truncr(0.25), LossSpec::cdiv(1.4)] {
        let train = TrainConfig { loss, ..TrainConfig::default() };
        let hyper = AdamHyper::from_train(&train);
        let mut state = TrainState::<f32>::new(&model, &train).unwrap();
        group.bench_function(loss.method.name(), |b| {
            b.iter(|| nn::train_step(&mut state, &data, &loss, &hyper, train.micro_batch).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let params = ModelParams::<f32>::init(&ModelConfig::standard(VOCAB, SEQ_LEN)).unwrap();
    let mut group = c.benchmark_group("generate");
    group.sample_size(10);
    group.bench_function("1000_equations", |b| {
        b.iter(|| nn::generate_many(&params, &[], 1000, 1.0, Decoding::Plain, black_box(3)).unwrap())
    });
    group.bench_function("eval_pr_1000", |b| {
        b.iter(|| multask::eval_pr(&params, 1000, 1.0, Decoding::Plain, 3, multask::DEFAULT_RECALL_DENOMINATOR).unwrap())
    });
    group.finish();
}

fn pass_at_k(c: &mut Criterion) {
    c.bench_function("pass_at_k_n200", |b| {
        b.iter(|| (1..=200).map(|k| prmetrics::pass_at_k(200, black_box(37), k).unwrap()).sum::<f64>())
    });
}

criterion_group!(benches, pr_enumeration, artcase_closed_form, training_step, sampling, pass_at_k);
criterion_main!(benches);
