//! Addresses a random prototype bank and shows how sparsification focuses
//! each read on a few prototypes while every row still sums to one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainrestorer::docmemory::{address_memory, default_threshold, protomix_coefficients};
use stainrestorer::{Tape, Tensor};

fn main() -> stainrestorer::Result<()> {
    let rng = &mut ChaCha8Rng::seed_from_u64(1);
    let (queries, items, dim) = (4, 16, 8);
    let tape = Tape::<f64>::new();
    let f = tape.constant(Tensor::from_fn(&[queries, dim], |_| rng.random_range(-1.0..1.0)))?;
    let bank = tape.constant(Tensor::from_fn(&[items, dim], |_| rng.random_range(-1.0..1.0)))?;
    for lambda in [0.0, default_threshold(items)] {
        let w = address_memory(f, bank, lambda)?.value();
        println!("threshold {lambda:.4}");
        for row in w.data().chunks(items) {
            let kept = row.iter().filter(|&&v| v > 0.0).count();
            println!("  row sum {:.12}  non-zero {kept:>2}/{items}", row.iter().sum::<f64>());
        }
    }
    for w in [-2.0, 0.0, 2.0] {
        let c = protomix_coefficients(w);
        println!("ProtoMix w={w:+}: semantic {:.3} instance {:.3} part {:.3}", c[0], c[1], c[2]);
    }
    Ok(())
}
