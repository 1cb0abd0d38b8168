//! Renders one pair per stain kind and severity into a directory of PPM files.
//!
//! cargo run --example stain_gallery -- /tmp/gallery

use std::path::PathBuf;

use stainrestorer::losses::psnr;
use stainrestorer::synthdata::{gen_pair, write_ppm, StainKind};

fn main() -> stainrestorer::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gallery".into()));
    std::fs::create_dir_all(&dir).map_err(|e| stainrestorer::Error::Io { path: dir.clone(), source: e })?;
    for kind in StainKind::ALL {
        for severity in 1..=3 {
            let pair = gen_pair(7, kind, severity, 128, 128)?;
            write_ppm(dir.join(format!("{kind}_{severity}.ppm")), &pair.stained)?;
            println!("{kind:<10} severity {severity}: PSNR {:.2} dB", psnr(&pair.stained, &pair.clean, 1.0)?);
        }
    }
    write_ppm(dir.join("clean.ppm"), &gen_pair(7, StainKind::Seal, 1, 128, 128)?.clean)?;
    println!("images in {}", dir.display());
    Ok(())
}
