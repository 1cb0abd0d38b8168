//! Saves, reloads and re-encodes a checkpoint; the bytes must not change.

use stainrestorer::train::{decode_checkpoint, encode_checkpoint, AdamWConfig, OptimState};
use stainrestorer::{build_model, ModelConfig};

fn main() -> stainrestorer::Result<()> {
    let cfg = ModelConfig::default();
    let (_, mut store) = build_model::<f32>(&cfg, 2)?;
    let optim = OptimState::new(&store, AdamWConfig::default());
    let bytes = encode_checkpoint(&cfg, &store, Some(&optim), 0);
    let ck = decode_checkpoint(&bytes)?;
    ck.load_into(&cfg, &mut store)?;
    let again = encode_checkpoint(&cfg, &store, ck.optim.as_ref(), ck.step);
    println!("{} tensors, {} bytes, identical re-encoding: {}", ck.tensors.len(), bytes.len(), again == bytes);
    Ok(())
}
