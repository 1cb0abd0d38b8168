//! Short training run on a generated dataset, then held-out evaluation
//! against the unrestored input.
//!
//! cargo run --release --example toy_training -- 200

use stainrestorer::synthdata::{gen_dataset, DatasetSpec, Split};
use stainrestorer::train::{evaluate_split, train, TrainConfig};
use stainrestorer::synthdata::Dataset;

fn main() -> stainrestorer::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dir = tempfile_dir();
    gen_dataset(&dir, &DatasetSpec { count: 120, seed: 5, ..DatasetSpec::default() })?;
    let cfg = TrainConfig {
        total_steps: steps,
        dataset: dir.clone(),
        ..TrainConfig::default()
    };
    let out = train(&cfg, |r| {
        if r.step % 25 == 0 {
            println!("step {:>5}  lr {:.2e}  total {:.5}", r.step, r.lr, r.total);
        }
    })?;
    let ds = Dataset::open(&dir)?;
    let ev = evaluate_split(&out.model, &out.store, &ds, Split::Test, cfg.eval_resolution, cfg.eval_overlap, "trained")?;
    print!("{}{}", ev.input.to_text(), ev.restored.to_text());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("stainr_toy_{}", std::process::id()))
}
