//! Translate every training image of a dataset toward a texture drawn from
//! the other bias group, producing an augmented dataset.
//!
//! Usage: `cargo run --release --example augment -- <checkpoint_dir> <dataset_dir> <out_dir> [seed]`

use std::path::PathBuf;

use texswap::datasets::{DatasetManifest, Split};
use texswap::trainer::build_augmented_dataset;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let usage = "usage: augment <checkpoint_dir> <dataset_dir> <out_dir> [seed]";
    let checkpoint = PathBuf::from(args.next().ok_or_else(|| anyhow::anyhow!(usage))?);
    let data = PathBuf::from(args.next().ok_or_else(|| anyhow::anyhow!(usage))?);
    let out = PathBuf::from(args.next().ok_or_else(|| anyhow::anyhow!(usage))?);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let train = DatasetManifest::load(&data, Split::Train)?;
    let (augmented, sources) = build_augmented_dataset(&checkpoint, &train, &out, seed)?;
    let flipped = sources.iter().filter(|s| s.source_b != s.texture_b).count();
    println!(
        "{} images written to {} ({flipped} with a swapped bias label)",
        augmented.len(),
        out.display()
    );
    Ok(())
}
