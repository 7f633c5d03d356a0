//! Trains the NLL, Trunc, TruncR and c-Div models on the multiplication task
//! for seeds 0..3 into a model cache, skipping runs already present.
//!
//! Usage: `cargo run --release -p prtrade --example train_grid [CACHE_DIR]`

use prtrade::losses::LossSpec;
use prtrade::multask::{ModelCache, RunSpec};

fn main() -> prtrade::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .or_else(|| std::env::var("PRTRADE_CACHE_DIR").ok())
        .unwrap_or_else(|| "target/acceptance-cache".into());
    let cache = ModelCache::new(dir);
    let losses = [
        LossSpec::nll(),
        LossSpec::trunc(0.25),
        LossSpec::truncr(0.25),
        LossSpec::cdiv(1.4),
        LossSpec::cdiv(0.5),
    ];
    for seed in 0..3 {
        for loss in &losses {
            let spec = RunSpec::standard(loss.clone(), seed);
            let label = format!("{} {} seed {seed}", loss.method, loss.params_label());
            let start = std::time::Instant::now();
            cache.get_or_train(&spec, |m| {
                if m.epoch % 25 == 0 {
                    eprintln!("{label}: epoch {} loss {:.5} nll {:.5}", m.epoch, m.loss, m.nll);
                }
            })?;
            eprintln!("{label}: done in {:.0?} -> {}", start.elapsed(), cache.checkpoint_path(&spec).display());
        }
    }
    Ok(())
}
