//! End-to-end flows across modules through the public API.

use prtrade::artcase::{self, ArtCaseParams};
use prtrade::multask::{self, ModelCache, RunSpec};
use prtrade::nn::{Checkpoint, Decoding};
use prtrade::prmetrics;
use prtrade::{Error, LossSpec};

fn tiny_spec(loss: LossSpec, seed: u64) -> RunSpec {
    let mut spec = RunSpec::standard(loss, seed);
    spec.task.dataset_size = 128;
    spec.model.n_layers = 1;
    spec.model.d_model = 8;
    spec.model.n_heads = 2;
    spec.model.d_ff = 16;
    spec.train.epochs = 2;
    spec.train.batch_size = 64;
    spec.train.micro_batch = 32;
    spec
}

#[test]
fn cache_round_trip_and_reproducible_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ModelCache::new(dir.path());
    let spec = tiny_spec(LossSpec::truncr(0.25), 3);
    assert!(cache.get(&spec).unwrap().is_none());

    let (trained, entry) = cache.get_or_train(&spec, |_| {}).unwrap();
    assert_eq!(entry.log.len(), 2);
    assert!(entry.log.iter().all(|m| m.loss.is_finite()));

    let (cached, _) = cache.get(&spec).unwrap().expect("stored");
    assert_eq!(cached.params, trained.params);
    assert_eq!(cached.epoch, 2);

    let eval = |ck: &Checkpoint<f32>| {
        multask::eval_pr(&ck.params, 256, 1.0, Decoding::Plain, 11, multask::DEFAULT_RECALL_DENOMINATOR).unwrap()
    };
    let (a, b) = (eval(&trained), eval(&cached));
    assert_eq!(a.unique_pairs, b.unique_pairs);
    assert_eq!(a.n_correct, b.n_correct);
    assert!((0.0..=1.0).contains(&a.precision));
    assert!(a.recall * a.recall_denominator as f64 <= a.n_correct as f64 + 1e-9);
}

#[test]
fn cache_rejects_a_sidecar_from_another_run() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ModelCache::new(dir.path());
    let spec = tiny_spec(LossSpec::nll(), 0);
    cache.get_or_train(&spec, |_| {}).unwrap();
    let other = tiny_spec(LossSpec::nll(), 1);
    let key = |s: &RunSpec| cache.checkpoint_path(s).with_extension("json");
    std::fs::copy(key(&spec), key(&other)).unwrap();
    std::fs::copy(cache.checkpoint_path(&spec), cache.checkpoint_path(&other)).unwrap();
    assert!(matches!(cache.get(&other), Err(Error::Corrupt(_))));
}

#[test]
fn artcase_closed_form_agrees_with_generic_pr_on_the_built_distributions() {
    let params = ArtCaseParams {
        vocab_size: 6,
        k: 4,
        len: 3,
        l1: 1,
        l2: 3,
        rho: 0.25,
        a: 0.6,
        epsilon: 0.2,
    };
    let p = artcase::build_p(&params).unwrap();
    let q = artcase::build_q(&params).unwrap();
    let lambdas = [0.02, 0.2, 1.0, 4.0, 50.0];
    let curve = prmetrics::pr_curve_exact(&p, &q, &lambdas).unwrap();
    assert!(curve.identity_error() < 1e-12);
    for (pt, &lambda) in curve.points.iter().zip(&lambdas) {
        let c = artcase::pr_closed_form(&params, 1.0, lambda).unwrap();
        assert!((c.alpha - pt.alpha).abs() < 1e-10, "λ={lambda}: {} vs {}", c.alpha, pt.alpha);
        assert!((c.beta - pt.beta).abs() < 1e-10, "λ={lambda}: {} vs {}", c.beta, pt.beta);
    }
}

#[test]
fn temperature_sweep_rejects_a_model_for_another_task() {
    let mut spec = tiny_spec(LossSpec::nll(), 0);
    spec.model.vocab_size = 5;
    let params = prtrade::nn::ModelParams::<f32>::init(&spec.model).unwrap();
    let err = multask::temperature_sweep(&params, &multask::EvalConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");
}
