//! Writes a small dataset and reads it back through the manifest.
//!
//! cargo run --example make_dataset -- /tmp/stain_data

use std::path::PathBuf;

use stainrestorer::synthdata::{gen_dataset, Dataset, DatasetSpec, Split};

fn main() -> stainrestorer::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "stain_data".into()));
    let spec = DatasetSpec {
        count: 60,
        seed: 3,
        ..DatasetSpec::default()
    };
    gen_dataset(&dir, &spec)?;
    let ds = Dataset::open(&dir)?;
    let train = ds.split(Split::Train);
    let test = ds.split(Split::Test);
    println!("{} train / {} test pairs in {}", train.len(), test.len(), dir.display());
    for e in test.iter().take(5) {
        println!("  test id {:>3}: {} severity {}", e.id, e.kind, e.severity);
    }
    let pair = ds.load_pair(&train[0])?;
    println!("first training pair is {:?}", pair.clean.shape());
    Ok(())
}
