//! Render a synthetic digit source and build the five-vs-six biased dataset.
//!
//! Usage: `cargo run --release --example build_dataset -- <out_dir> [per_class]`

use std::path::PathBuf;

use texswap::datasets::{build_five_vs_six, write_digit_source, Split};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-data".into()));
    let per_class: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let source = out.join("source");
    let needed = 2 * per_class + (per_class / 10).max(1);
    write_digit_source(&source, needed, 0)?;
    let manifests = build_five_vs_six(&source, &out.join("five_six"), per_class, 0)?;
    for m in &manifests {
        let textured = m.records.iter().filter(|r| r.b == 0).count();
        println!("{:<5} {:>5} records, {textured} textured", m.split, m.len());
    }
    let train = manifests.iter().find(|m| m.split == Split::Train).unwrap();
    println!("first image: {}", train.image_path(0).display());
    Ok(())
}
